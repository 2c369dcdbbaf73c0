#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptseg/errors.hpp"

namespace promptseg {

/// Dense row-major H x W array.
template <typename T>
class Grid {
public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width)
  {
    if (height < 0 || width < 0) {
      throw ShapeError("grid dimensions must be non-negative");
    }
    data_.assign(static_cast<size_t>(height) * static_cast<size_t>(width), fill);
  }
  Grid(int height, int width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data))
  {
    if (data_.size() != static_cast<size_t>(height) * static_cast<size_t>(width)) {
      throw ShapeError("grid data size does not match " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T &operator()(int row, int col) { return data_[index(row, col)]; }
  const T &operator()(int row, int col) const { return data_[index(row, col)]; }
  T &operator[](size_t i) { return data_[i]; }
  const T &operator[](size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T> &storage() { return data_; }
  const std::vector<T> &storage() const { return data_; }

  bool contains(int row, int col) const
  {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }
  bool same_shape(int height, int width) const { return height_ == height && width_ == width; }
  template <typename U>
  bool same_shape(const Grid<U> &other) const
  {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid &, const Grid &) = default;

private:
  size_t index(int row, int col) const
  {
    return static_cast<size_t>(row) * static_cast<size_t>(width_) + static_cast<size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Single-channel intensities in [0, 1].
using ImageGrid = Grid<double>;
/// Pre-sigmoid per-pixel confidence.
using MaskLogits = Grid<double>;
/// Per-pixel {0, 1}.
using BinaryMask = Grid<std::uint8_t>;

enum class Label : std::uint8_t { negative = 0, positive = 1 };

/// Pixel click. x is the column, y the row.
struct Point {
  int x = 0;
  int y = 0;
  Label label = Label::positive;
  friend bool operator==(const Point &, const Point &) = default;
};

/// Half-open pixel box [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(const Box &inner) const
  {
    return x0 <= inner.x0 && y0 <= inner.y0 && x1 >= inner.x1 && y1 >= inner.y1;
  }
  friend bool operator==(const Box &, const Box &) = default;
};

struct PromptSet {
  std::vector<Point> points;
  std::optional<Box> box;

  bool empty() const { return points.empty() && !box.has_value(); }
  size_t token_count() const { return points.size() + (box ? 2 : 0); }
  friend bool operator==(const PromptSet &, const PromptSet &) = default;
};

/// Throws InvalidArgument when a point or the box falls outside a height x width image.
void validate_prompts(const PromptSet &prompts, int height, int width);

/// Throws InvalidArgument when any value is non-finite or outside [0, 1].
void validate_image(const ImageGrid &image);

/// Zero-pads on the bottom and right so both dimensions are multiples of `multiple`.
ImageGrid pad_to_multiple(const ImageGrid &image, int multiple);
BinaryMask pad_to_multiple(const BinaryMask &mask, int multiple);

std::string to_string(Label label);
Label label_from_string(const std::string &text);

size_t count_foreground(const BinaryMask &mask);

/// Tight half-open bounding box of the foreground; nullopt for an empty mask.
std::optional<Box> bounding_box(const BinaryMask &mask);

} // namespace promptseg
