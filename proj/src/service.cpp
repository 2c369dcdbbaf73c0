#include "promptseg/service.hpp"

#include <cstdio>
#include <random>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "promptseg/image_io.hpp"
#include "promptseg/mask_ops.hpp"
#include "promptseg/rle.hpp"

namespace promptseg {

using nlohmann::json;

namespace {

json point_json(const Point &p)
{
  return {{"x", p.x}, {"y", p.y}, {"label", to_string(p.label)}};
}

json box_json(const Box &b) { return {{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}}; }

json prompts_json(const PromptSet &prompts)
{
  json points = json::array();
  for (const auto &p : prompts.points) {
    points.push_back(point_json(p));
  }
  return {{"points", points}, {"box", prompts.box ? box_json(*prompts.box) : json(nullptr)}};
}

std::string new_session_id(std::uint64_t counter)
{
  static const std::uint64_t salt = [] {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }();
  // splitmix64 finalizer keeps ids unique per counter value.
  std::uint64_t z = counter + salt + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(z));
  return buf;
}

json parse_body(const std::string &body)
{
  try {
    return json::parse(body);
  } catch (const json::exception &e) {
    throw ServiceError(400, std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T> T field(const json &j, const char *key)
{
  if (!j.is_object() || !j.contains(key)) {
    throw ServiceError(400, std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ServiceError(400, std::string("field '") + key + "' has the wrong type");
  }
}

} // namespace

AnnotationService::AnnotationService(std::unique_ptr<ModelAdapter> prototype, ServiceConfig config,
                                     std::optional<DatasetManifest> manifest,
                                     std::vector<CineLoop> loops)
    : prototype_(std::move(prototype)), config_(std::move(config)),
      manifest_(std::move(manifest)), loops_(std::move(loops))
{
  if (!prototype_) {
    throw InvalidArgument("annotation service needs a model");
  }
  make_tracker(config_.tracker); // rejects unknown tracker names early
}

AnnotationService::~AnnotationService() { stop(); }

std::shared_ptr<SessionState> AnnotationService::find(const std::string &id)
{
  const auto now = Clock::now();
  expire_idle(now);
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    throw ServiceError(404, "unknown session " + id);
  }
  it->second->last_access = now;
  return it->second;
}

size_t AnnotationService::expire_idle(Clock::time_point now)
{
  std::lock_guard lock(sessions_mutex_);
  return std::erase_if(sessions_, [&](const auto &entry) {
    return now - entry.second->last_access > config_.idle_timeout;
  });
}

size_t AnnotationService::session_count() const
{
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

json AnnotationService::add_session(std::shared_ptr<SessionState> session)
{
  session->adapter = prototype_->clone();
  const BinaryMask gt = session->gt ? *session->gt
                                    : BinaryMask(session->image.height(), session->image.width());
  session->adapter->set_image(session->image, session->image_ref, gt);
  session->last_access = Clock::now();
  json out = {{"height", session->image.height()},
              {"width", session->image.width()},
              {"image", session->image_ref},
              {"has_gt", session->gt.has_value()}};
  if (session->loop) {
    out["frame_index"] = session->frame_index;
    out["frame_count"] = session->loop->frame_count();
    out["object"] = session->object_id;
  }
  std::lock_guard lock(sessions_mutex_);
  session->id = new_session_id(next_id_++);
  out["session_id"] = session->id;
  sessions_[session->id] = std::move(session);
  return out;
}

json AnnotationService::create_from_png(const std::string &png_bytes)
{
  GrayImage gray;
  try {
    gray = decode_png(std::span(reinterpret_cast<const std::uint8_t *>(png_bytes.data()),
                                png_bytes.size()),
                      "upload");
  } catch (const DataError &e) {
    throw ServiceError(415, e.what());
  }
  auto s = std::make_shared<SessionState>();
  s->image_ref = "upload";
  s->image = to_image(gray);
  return add_session(std::move(s));
}

json AnnotationService::create_from_reference(const json &request)
{
  auto s = std::make_shared<SessionState>();
  const auto object = field<std::string>(request, "object");
  if (request.contains("record")) {
    if (!manifest_) {
      throw ServiceError(409, "service was started without a dataset manifest");
    }
    const auto record_id = field<std::string>(request, "record");
    const auto &records = manifest_->records;
    auto rec = std::find_if(records.begin(), records.end(),
                            [&](const ManifestRecord &r) { return r.id == record_id; });
    if (rec == records.end()) {
      throw ServiceError(404, "unknown record " + record_id);
    }
    auto ref = std::find_if(rec->masks.begin(), rec->masks.end(),
                            [&](const MaskRef &m) { return m.object_id == object; });
    if (ref == rec->masks.end()) {
      throw ServiceError(404, "record " + record_id + " has no object " + object);
    }
    try {
      s->image = read_image(manifest_->resolve(rec->image));
      s->gt = read_mask(manifest_->resolve(ref->path));
    } catch (const DataError &e) {
      throw ServiceError(415, e.what());
    }
    s->image_ref = record_id + "/" + object;
  } else if (request.contains("loop")) {
    const auto loop_id = field<std::string>(request, "loop");
    auto loop = std::find_if(loops_.begin(), loops_.end(),
                             [&](const CineLoop &l) { return l.id == loop_id; });
    if (loop == loops_.end()) {
      throw ServiceError(404, "unknown loop " + loop_id);
    }
    auto obj = loop->objects.find(object);
    if (obj == loop->objects.end()) {
      throw ServiceError(404, "loop " + loop_id + " has no object " + object);
    }
    s->loop = &*loop;
    s->object_id = object;
    s->image = loop->frames[0];
    s->gt = obj->second[0];
    s->image_ref = loop_id + "/" + object;
  } else {
    throw ServiceError(400, "reference needs 'record' or 'loop'");
  }
  return add_session(std::move(s));
}

void AnnotationService::repredict(SessionState &s)
{
  if (s.prompts.empty()) {
    s.mask = s.base_mask;
  } else {
    s.mask = s.adapter->predict(s.prompts);
  }
}

json AnnotationService::mask_response(const SessionState &s) const
{
  json out = {{"session_id", s.id},
              {"prompt_count", s.undo_stack.size()},
              {"mask", s.mask ? rle_to_json(*s.mask) : json(nullptr)}};
  if (s.loop) {
    out["frame_index"] = s.frame_index;
  }
  if (s.gt && s.mask) {
    out["dsc"] = dsc(*s.mask, *s.gt);
  }
  return out;
}

json AnnotationService::add_click(const std::string &id, int x, int y, Label label)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (x < 0 || y < 0 || x >= s->image.width() || y >= s->image.height()) {
    throw ServiceError(422, "click (" + std::to_string(x) + ", " + std::to_string(y) +
                                ") is outside the " + std::to_string(s->image.width()) + "x" +
                                std::to_string(s->image.height()) + " image");
  }
  s->undo_stack.push_back(s->prompts);
  s->prompts.points.push_back({x, y, label});
  s->log.push_back({{"kind", "click"}, {"point", point_json(s->prompts.points.back())}});
  repredict(*s);
  return mask_response(*s);
}

json AnnotationService::set_box(const std::string &id, const Box &box)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > s->image.width() || box.y1 > s->image.height() ||
      box.x1 <= box.x0 || box.y1 <= box.y0) {
    throw ServiceError(422, "box must be non-empty and inside the image");
  }
  s->undo_stack.push_back(s->prompts);
  s->prompts.box = box;
  s->log.push_back({{"kind", "box"}, {"box", box_json(box)}});
  repredict(*s);
  return mask_response(*s);
}

json AnnotationService::undo(const std::string &id)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->undo_stack.empty()) {
    throw ServiceError(409, "nothing to undo");
  }
  s->prompts = std::move(s->undo_stack.back());
  s->undo_stack.pop_back();
  s->log.pop_back();
  repredict(*s);
  return mask_response(*s);
}

json AnnotationService::get_mask_rle(const std::string &id)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (!s->mask) {
    throw ServiceError(409, "no prompts");
  }
  return mask_response(*s);
}

std::string AnnotationService::get_mask_png(const std::string &id)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (!s->mask) {
    throw ServiceError(409, "no prompts");
  }
  const auto bytes = encode_png(mask_to_gray(*s->mask));
  return {bytes.begin(), bytes.end()};
}

json AnnotationService::advance(const std::string &id)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (!s->loop) {
    throw ServiceError(409, "session has no cine loop");
  }
  if (s->frame_index + 1 >= s->loop->frame_count()) {
    throw ServiceError(409, "already at the last frame");
  }
  if (!s->mask) {
    throw ServiceError(409, "no mask to propagate");
  }
  auto tracker = make_tracker(config_.tracker);
  tracker->init(s->image, {{s->object_id, *s->mask}}, s->frame_index);
  const int next = s->frame_index + 1;
  MaskSet tracked = tracker->propagate(s->loop->frames[static_cast<size_t>(next)], next);

  s->history.push_back({{"frame_index", s->frame_index}, {"prompts", s->log}});
  s->frame_index = next;
  s->image = s->loop->frames[static_cast<size_t>(next)];
  s->gt = s->loop->objects.at(s->object_id)[static_cast<size_t>(next)];
  s->prompts = {};
  s->undo_stack.clear();
  s->log.clear();
  s->base_mask = tracked.at(s->object_id);
  s->adapter->set_image(s->image, s->image_ref, *s->gt);
  repredict(*s);

  json out = mask_response(*s);
  const double tracked_dsc = dsc(*s->mask, *s->gt);
  out["tracked_dsc"] = tracked_dsc;
  out["needs_intervention"] = tracked_dsc < config_.dsc_floor;
  return out;
}

json AnnotationService::export_session(const std::string &id)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (config_.export_dir.empty()) {
    throw ServiceError(409, "service was started without an export directory");
  }
  if (!s->mask) {
    throw ServiceError(409, "no prompts");
  }
  char name[32];
  std::snprintf(name, sizeof name, "frame_%03d", s->frame_index);
  const auto dir = config_.export_dir / s->id;
  const auto mask_path = dir / (std::string(name) + "_mask.png");
  const auto log_path = dir / (std::string(name) + "_prompts.json");
  json log = {{"session_id", s->id},
              {"image", s->image_ref},
              {"frame_index", s->frame_index},
              {"prompts", s->log},
              {"final_prompts", prompts_json(s->prompts)},
              {"previous_frames", s->history}};
  write_mask(*s->mask, mask_path);
  write_text_atomic(log_path, log.dump(2) + "\n");
  json out = mask_response(*s);
  out["files"] = {mask_path.string(), log_path.string()};
  out["prompt_log"] = log;
  return out;
}

std::pair<PromptSet, std::optional<BinaryMask>> AnnotationService::snapshot(const std::string &id)
{
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return {s->prompts, s->mask};
}

namespace {

using Handler = std::function<void(const httplib::Request &, httplib::Response &)>;

Handler guarded(std::function<void(const httplib::Request &, httplib::Response &)> body)
{
  return [body = std::move(body)](const httplib::Request &req, httplib::Response &res) {
    try {
      body(req, res);
    } catch (const ServiceError &e) {
      res.status = e.status();
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception &e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  };
}

void reply(httplib::Response &res, const json &body, int status = 200)
{
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

} // namespace

void AnnotationService::bind(httplib::Server &server)
{
  const std::string sid = R"(/api/v1/sessions/([0-9a-f]+))";

  server.Get("/api/v1/health", guarded([this](const auto &, auto &res) {
               reply(res, {{"status", "ok"}, {"sessions", session_count()}});
             }));

  server.Post("/api/v1/sessions", guarded([this](const auto &req, auto &res) {
                const std::string type = req.get_header_value("Content-Type");
                if (type.starts_with("image/png")) {
                  reply(res, create_from_png(req.body), 201);
                } else if (type.starts_with("application/json")) {
                  reply(res, create_from_reference(parse_body(req.body)), 201);
                } else {
                  throw ServiceError(415, "expected image/png or application/json, got '" +
                                              type + "'");
                }
              }));

  server.Post(sid + "/clicks", guarded([this](const auto &req, auto &res) {
                const json body = parse_body(req.body);
                Label label;
                try {
                  label = label_from_string(field<std::string>(body, "label"));
                } catch (const InvalidArgument &e) {
                  throw ServiceError(400, e.what());
                }
                reply(res, add_click(req.matches[1], field<int>(body, "x"), field<int>(body, "y"),
                                     label));
              }));

  server.Post(sid + "/box", guarded([this](const auto &req, auto &res) {
                const json body = parse_body(req.body);
                const Box box{field<int>(body, "x0"), field<int>(body, "y0"),
                              field<int>(body, "x1"), field<int>(body, "y1")};
                reply(res, set_box(req.matches[1], box));
              }));

  server.Post(sid + "/undo", guarded([this](const auto &req, auto &res) {
                reply(res, undo(req.matches[1]));
              }));

  server.Get(sid + "/mask", guarded([this](const auto &req, auto &res) {
               const std::string format =
                   req.has_param("format") ? req.get_param_value("format") : "rle";
               if (format == "rle") {
                 reply(res, get_mask_rle(req.matches[1]));
               } else if (format == "png") {
                 res.set_content(get_mask_png(req.matches[1]), "image/png");
               } else {
                 throw ServiceError(415, "unsupported mask format '" + format + "'");
               }
             }));

  server.Post(sid + "/advance", guarded([this](const auto &req, auto &res) {
                reply(res, advance(req.matches[1]));
              }));

  server.Post(sid + "/export", guarded([this](const auto &req, auto &res) {
                reply(res, export_session(req.matches[1]));
              }));

  if (!config_.static_dir.empty() && !server.set_mount_point("/", config_.static_dir.string())) {
    throw DataError("static directory not found: " + config_.static_dir.string());
  }
}

httplib::Server &AnnotationService::ensure_server()
{
  if (!server_) {
    server_ = std::make_unique<httplib::Server>();
    bind(*server_);
  }
  return *server_;
}

void AnnotationService::listen(const std::string &host, int port)
{
  if (!ensure_server().listen(host, port)) {
    throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }
}

int AnnotationService::bind_port(const std::string &host, int port)
{
  httplib::Server &server = ensure_server();
  if (port == 0) {
    port = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw std::runtime_error("cannot bind to " + host);
  }
  return port;
}

void AnnotationService::listen_after_bind() { ensure_server().listen_after_bind(); }

void AnnotationService::stop()
{
  if (server_) {
    server_->stop();
  }
}

} // namespace promptseg
