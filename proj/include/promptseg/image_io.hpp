#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "promptseg/types.hpp"

namespace promptseg {

using GrayImage = Grid<std::uint8_t>;

/// 8-bit single-channel PNG. Throws DataError for colour or alpha images.
GrayImage decode_png(std::span<const std::uint8_t> bytes, const std::string &source = "<memory>");
std::vector<std::uint8_t> encode_png(const GrayImage &image);

GrayImage read_png(const std::filesystem::path &path);
/// Writes via a temporary file and rename.
void write_png(const GrayImage &image, const std::filesystem::path &path);

ImageGrid to_image(const GrayImage &gray);
GrayImage to_gray(const ImageGrid &image);

ImageGrid read_image(const std::filesystem::path &path);
void write_image(const ImageGrid &image, const std::filesystem::path &path);

/// Nonzero pixels read as 1.
BinaryMask read_mask(const std::filesystem::path &path);
/// Writes {0, 255}.
void write_mask(const BinaryMask &mask, const std::filesystem::path &path);

BinaryMask mask_from_gray(const GrayImage &gray);
GrayImage mask_to_gray(const BinaryMask &mask);

/// Writes bytes atomically (temp file + rename); throws DataError naming the path.
void write_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path &path, const std::string &text);
std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
std::string read_text(const std::filesystem::path &path);

} // namespace promptseg
