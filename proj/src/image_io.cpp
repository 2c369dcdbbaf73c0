#include "promptseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <png.h>

namespace promptseg {

namespace fs = std::filesystem;

GrayImage decode_png(std::span<const std::uint8_t> bytes, const std::string &source)
{
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(source + ": not a decodable PNG (" + image.message + ")");
  }
  if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    throw DataError(source + ": expected a single-channel image, found a multi-channel PNG");
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out(static_cast<int>(image.height), static_cast<int>(image.width));
  if (!png_image_finish_read(&image, nullptr, out.storage().data(), 0, nullptr)) {
    throw DataError(source + ": PNG decode failed (" + image.message + ")");
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const GrayImage &gray)
{
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(gray.width());
  image.height = static_cast<png_uint_32>(gray.height());
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, gray.storage().data(), 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, gray.storage().data(), 0,
                                 nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_file(const fs::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const fs::path &path, std::span<const std::uint8_t> bytes)
{
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw DataError("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    throw DataError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

void write_text_atomic(const fs::path &path, const std::string &text)
{
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()),
                                    text.size()));
}

GrayImage read_png(const fs::path &path)
{
  const auto bytes = read_file(path);
  return decode_png(bytes, path.string());
}

void write_png(const GrayImage &image, const fs::path &path)
{
  write_file_atomic(path, encode_png(image));
}

ImageGrid to_image(const GrayImage &gray)
{
  ImageGrid out(gray.height(), gray.width());
  for (size_t i = 0; i < gray.size(); ++i) {
    out[i] = gray[i] / 255.0;
  }
  return out;
}

GrayImage to_gray(const ImageGrid &image)
{
  GrayImage out(image.height(), image.width());
  for (size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

ImageGrid read_image(const fs::path &path) { return to_image(read_png(path)); }
void write_image(const ImageGrid &image, const fs::path &path) { write_png(to_gray(image), path); }

BinaryMask mask_from_gray(const GrayImage &gray)
{
  BinaryMask out(gray.height(), gray.width());
  for (size_t i = 0; i < gray.size(); ++i) {
    out[i] = gray[i] != 0 ? 1 : 0;
  }
  return out;
}

GrayImage mask_to_gray(const BinaryMask &mask)
{
  GrayImage out(mask.height(), mask.width());
  for (size_t i = 0; i < mask.size(); ++i) {
    out[i] = mask[i] ? 255 : 0;
  }
  return out;
}

BinaryMask read_mask(const fs::path &path) { return mask_from_gray(read_png(path)); }
void write_mask(const BinaryMask &mask, const fs::path &path) { write_png(mask_to_gray(mask), path); }

} // namespace promptseg
