#include "promptseg/types.hpp"

#include <algorithm>
#include <cmath>

namespace promptseg {

void validate_prompts(const PromptSet &prompts, int height, int width)
{
  for (const auto &p : prompts.points) {
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
      throw InvalidArgument("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                            ") lies outside the " + std::to_string(height) + "x" +
                            std::to_string(width) + " image");
    }
  }
  if (prompts.box) {
    const Box &b = *prompts.box;
    if (b.x0 >= b.x1 || b.y0 >= b.y1) {
      throw InvalidArgument("box requires x0 < x1 and y0 < y1");
    }
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > width || b.y1 > height) {
      throw InvalidArgument("box lies outside the image bounds");
    }
  }
}

void validate_image(const ImageGrid &image)
{
  if (image.height() <= 0 || image.width() <= 0) {
    throw InvalidArgument("image must have positive dimensions");
  }
  for (double v : image.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidArgument("image intensities must be finite and within [0, 1]");
    }
  }
}

namespace {

template <typename T>
Grid<T> pad_grid(const Grid<T> &src, int multiple)
{
  if (multiple <= 0) {
    throw InvalidArgument("padding multiple must be positive");
  }
  const int h = (src.height() + multiple - 1) / multiple * multiple;
  const int w = (src.width() + multiple - 1) / multiple * multiple;
  if (h == src.height() && w == src.width()) {
    return src;
  }
  Grid<T> out(h, w);
  for (int r = 0; r < src.height(); ++r) {
    std::copy_n(&src(r, 0), src.width(), &out(r, 0));
  }
  return out;
}

} // namespace

ImageGrid pad_to_multiple(const ImageGrid &image, int multiple) { return pad_grid(image, multiple); }
BinaryMask pad_to_multiple(const BinaryMask &mask, int multiple) { return pad_grid(mask, multiple); }

std::string to_string(Label label) { return label == Label::positive ? "positive" : "negative"; }

Label label_from_string(const std::string &text)
{
  if (text == "positive" || text == "pos" || text == "1") {
    return Label::positive;
  }
  if (text == "negative" || text == "neg" || text == "0") {
    return Label::negative;
  }
  throw InvalidArgument("unknown click label '" + text + "'");
}

size_t count_foreground(const BinaryMask &mask)
{
  return static_cast<size_t>(std::count_if(mask.values().begin(), mask.values().end(),
                                           [](std::uint8_t v) { return v != 0; }));
}

std::optional<Box> bounding_box(const BinaryMask &mask)
{
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (mask(r, c)) {
        x0 = std::min(x0, c);
        y0 = std::min(y0, r);
        x1 = std::max(x1, c);
        y1 = std::max(y1, r);
      }
    }
  }
  if (x1 < 0) {
    return std::nullopt;
  }
  return Box{x0, y0, x1 + 1, y1 + 1};
}

} // namespace promptseg
