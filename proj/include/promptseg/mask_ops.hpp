#pragma once

#include <vector>

#include "promptseg/types.hpp"

namespace promptseg {

/// 2|A and B| / (|A| + |B|); 1.0 when both masks are empty.
double dsc(const BinaryMask &pred, const BinaryMask &gt);

/// 4-connected component labels (0 = background, 1..n in row-major discovery order).
struct Components {
  Grid<int> labels;
  std::vector<size_t> sizes; // sizes[k] is the pixel count of label k + 1
};
Components connected_components(const BinaryMask &mask);

/// Euclidean distance from each foreground pixel to the nearest background pixel,
/// treating everything outside the image as background. Background pixels get 0.
Grid<double> distance_transform(const BinaryMask &mask);

BinaryMask mask_and_not(const BinaryMask &a, const BinaryMask &b);

/// Shifts a mask by (dx, dy); pixels shifted in from outside are 0.
BinaryMask shift_mask(const BinaryMask &mask, int dx, int dy);

} // namespace promptseg
