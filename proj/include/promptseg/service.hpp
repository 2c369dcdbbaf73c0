#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/cine.hpp"
#include "promptseg/dataset.hpp"
#include "promptseg/metrics.hpp"

namespace httplib {
class Server;
}

namespace promptseg {

/// Error carrying the HTTP status the transport should return.
class ServiceError : public std::runtime_error {
public:
  ServiceError(int status, const std::string &message)
      : std::runtime_error(message), status_(status)
  {
  }
  int status() const { return status_; }

private:
  int status_;
};

struct ServiceConfig {
  std::chrono::seconds idle_timeout{30 * 60};
  double dsc_floor = 0.9;
  std::string tracker = "previous";
  /// Root for POST /export output; export is rejected when empty.
  std::filesystem::path export_dir;
  /// Served at "/" when set.
  std::filesystem::path static_dir;
};

struct SessionState {
  std::string id;
  std::string image_ref;
  ImageGrid image;
  std::optional<BinaryMask> gt;
  PromptSet prompts;
  /// Mask shown with an empty prompt set (the tracked mask after an advance).
  std::optional<BinaryMask> base_mask;
  std::optional<BinaryMask> mask;
  /// Prompt sets before each applied prompt; depth equals the number of prompts applied.
  std::vector<PromptSet> undo_stack;
  /// One entry per applied prompt, popped by undo.
  std::vector<nlohmann::json> log;
  /// Prompt logs of frames left behind by advance.
  nlohmann::json history = nlohmann::json::array();
  std::unique_ptr<ModelAdapter> adapter;
  // Cine context.
  const CineLoop *loop = nullptr;
  std::string object_id;
  int frame_index = 0;
  std::chrono::steady_clock::time_point last_access;
  std::mutex mutex;
};

class AnnotationService {
public:
  using Clock = std::chrono::steady_clock;

  /// `prototype` is cloned once per session; model weights stay shared.
  AnnotationService(std::unique_ptr<ModelAdapter> prototype, ServiceConfig config = {},
                    std::optional<DatasetManifest> manifest = std::nullopt,
                    std::vector<CineLoop> loops = {});
  ~AnnotationService();

  // Typed operations; all throw ServiceError. JSON shapes match the HTTP responses.
  nlohmann::json create_from_png(const std::string &png_bytes);
  /// {"record": id, "object": obj} against the manifest, or {"loop": id, "object": obj}.
  nlohmann::json create_from_reference(const nlohmann::json &request);
  nlohmann::json add_click(const std::string &id, int x, int y, Label label);
  nlohmann::json set_box(const std::string &id, const Box &box);
  nlohmann::json undo(const std::string &id);
  /// Same shape as the click response; the RLE payload is under "mask".
  nlohmann::json get_mask_rle(const std::string &id);
  std::string get_mask_png(const std::string &id);
  nlohmann::json advance(const std::string &id);
  nlohmann::json export_session(const std::string &id);

  /// Drops sessions idle for longer than the timeout as of `now`. Returns the count.
  size_t expire_idle(Clock::time_point now);
  size_t session_count() const;
  /// Read-only copy of a session's prompts and mask, for inspection.
  std::pair<PromptSet, std::optional<BinaryMask>> snapshot(const std::string &id);

  /// Registers the /api/v1 routes (and the static mount) on `server`.
  void bind(httplib::Server &server);
  /// Blocks until stop() is called.
  void listen(const std::string &host, int port);
  /// Binds `port` (0 picks a free one) and returns the bound port; call
  /// listen_after_bind() to serve.
  int bind_port(const std::string &host, int port);
  void listen_after_bind();
  void stop();

private:
  httplib::Server &ensure_server();
  std::shared_ptr<SessionState> find(const std::string &id);
  nlohmann::json add_session(std::shared_ptr<SessionState> session);
  void repredict(SessionState &s);
  nlohmann::json mask_response(const SessionState &s) const;

  std::unique_ptr<ModelAdapter> prototype_;
  ServiceConfig config_;
  std::optional<DatasetManifest> manifest_;
  std::vector<CineLoop> loops_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionState>> sessions_;
  std::uint64_t next_id_ = 0;
  std::unique_ptr<httplib::Server> server_;
};

} // namespace promptseg
