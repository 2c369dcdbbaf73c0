#include "promptseg/archive.hpp"

#include <bit>
#include <cstring>
#include <regex>

#include <zlib.h>

#include "promptseg/errors.hpp"

namespace promptseg {

static_assert(std::endian::native == std::endian::little, "archive code assumes little-endian");

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1; // 1980-01-01

void put16(Bytes &out, std::uint16_t v)
{
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(Bytes &out, std::uint32_t v)
{
  put16(out, static_cast<std::uint16_t>(v));
  put16(out, static_cast<std::uint16_t>(v >> 16));
}

std::uint16_t get16(const Bytes &in, size_t at)
{
  return static_cast<std::uint16_t>(in[at] | (in[at + 1] << 8));
}

std::uint32_t get32(const Bytes &in, size_t at)
{
  return get16(in, at) | (static_cast<std::uint32_t>(get16(in, at + 2)) << 16);
}

std::uint32_t crc_of(const Bytes &data)
{
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), data.data(), static_cast<uInt>(data.size())));
}

} // namespace

Bytes write_zip(const std::vector<std::pair<std::string, Bytes>> &entries)
{
  Bytes out;
  Bytes central;
  for (const auto &[name, data] : entries) {
    if (data.size() > 0xffffffffu || out.size() > 0xffffffffu) {
      throw DataError("archive entry too large: " + name);
    }
    const auto offset = static_cast<std::uint32_t>(out.size());
    const std::uint32_t crc = crc_of(data);
    const auto size = static_cast<std::uint32_t>(data.size());
    const auto name_len = static_cast<std::uint16_t>(name.size());

    put32(out, kLocalSig);
    put16(out, 20); // version needed
    put16(out, 0);  // flags
    put16(out, 0);  // stored
    put16(out, 0);  // time
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, name_len);
    put16(out, 0);
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), data.begin(), data.end());

    put32(central, kCentralSig);
    put16(central, 20); // version made by
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, kDosDate);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, name_len);
    put16(central, 0); // extra
    put16(central, 0); // comment
    put16(central, 0); // disk
    put16(central, 0); // internal attrs
    put32(central, 0); // external attrs
    put32(central, offset);
    central.insert(central.end(), name.begin(), name.end());
  }
  const auto central_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put32(out, kEndSig);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint16_t>(entries.size()));
  put16(out, static_cast<std::uint16_t>(entries.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, central_offset);
  put16(out, 0);
  return out;
}

std::map<std::string, Bytes> read_zip(const Bytes &in, const std::string &source)
{
  if (in.size() < 22) {
    throw DataError(source + ": not an archive (too short)");
  }
  size_t end = in.size() - 22;
  while (true) {
    if (get32(in, end) == kEndSig) {
      break;
    }
    if (end == 0 || in.size() - end > 22 + 0xffff) {
      throw DataError(source + ": not an archive (no end-of-directory record)");
    }
    --end;
  }
  const std::uint16_t count = get16(in, end + 10);
  size_t at = get32(in, end + 16);
  std::map<std::string, Bytes> entries;
  for (std::uint16_t i = 0; i < count; ++i) {
    if (at + 46 > in.size() || get32(in, at) != kCentralSig) {
      throw DataError(source + ": corrupt central directory");
    }
    const std::uint16_t method = get16(in, at + 10);
    const std::uint32_t crc = get32(in, at + 16);
    const std::uint32_t size = get32(in, at + 20);
    const std::uint16_t name_len = get16(in, at + 28);
    const std::uint16_t extra_len = get16(in, at + 30);
    const std::uint16_t comment_len = get16(in, at + 32);
    const std::uint32_t local = get32(in, at + 42);
    if (at + 46 + name_len > in.size()) {
      throw DataError(source + ": corrupt central directory");
    }
    std::string name(in.begin() + static_cast<long>(at + 46),
                      in.begin() + static_cast<long>(at + 46 + name_len));
    if (method != 0) {
      throw DataError(source + ": entry '" + name + "' uses an unsupported compression method");
    }
    if (local + 30 > in.size() || get32(in, local) != kLocalSig) {
      throw DataError(source + ": corrupt local header for '" + name + "'");
    }
    const size_t data_at = local + 30 + get16(in, local + 26) + get16(in, local + 28);
    if (data_at + size > in.size()) {
      throw DataError(source + ": entry '" + name + "' is truncated");
    }
    Bytes data(in.begin() + static_cast<long>(data_at),
               in.begin() + static_cast<long>(data_at + size));
    if (crc_of(data) != crc) {
      throw DataError(source + ": CRC mismatch in entry '" + name + "'");
    }
    entries.emplace(std::move(name), std::move(data));
    at += 46 + name_len + extra_len + comment_len;
  }
  return entries;
}

Bytes encode_npy(const ag::Matrix &m)
{
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(m.rows()) + ", " + std::to_string(m.cols()) + "), }";
  // Magic (6) + version (2) + length (2) + header, padded to a multiple of 64 with '\n' last.
  const size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  Bytes out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put16(out, static_cast<std::uint16_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const auto *raw = reinterpret_cast<const std::uint8_t *>(m.data());
  out.insert(out.end(), raw, raw + m.size() * sizeof(double));
  return out;
}

ag::Matrix decode_npy(const Bytes &in, const std::string &source)
{
  static const std::uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (in.size() < 10 || std::memcmp(in.data(), magic, 6) != 0 || in[6] != 1) {
    throw DataError(source + ": not a version-1 .npy array");
  }
  const size_t header_len = get16(in, 8);
  if (10 + header_len > in.size()) {
    throw DataError(source + ": truncated .npy header");
  }
  const std::string header(in.begin() + 10, in.begin() + static_cast<long>(10 + header_len));
  static const std::regex pattern(
      R"(\{'descr': '<f8', 'fortran_order': False, 'shape': \((\d+), (\d+)\), \}\s*)");
  std::smatch match;
  if (!std::regex_match(header, match, pattern)) {
    throw DataError(source + ": unsupported .npy header (expected 2-D little-endian float64)");
  }
  const long rows = std::stol(match[1].str());
  const long cols = std::stol(match[2].str());
  const size_t bytes = static_cast<size_t>(rows * cols) * sizeof(double);
  if (10 + header_len + bytes != in.size()) {
    throw DataError(source + ": .npy payload size does not match its shape");
  }
  ag::Matrix m(rows, cols);
  std::memcpy(m.data(), in.data() + 10 + header_len, bytes);
  return m;
}

} // namespace promptseg
