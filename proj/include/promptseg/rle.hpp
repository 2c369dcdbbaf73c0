#pragma once

#include <utility>
#include <vector>

#include <json.hpp>

#include "promptseg/types.hpp"

namespace promptseg {

/// Foreground runs as (start, length) over row-major pixel indices (start = y * width + x).
/// Runs are maximal within a row, never cross a row boundary and are sorted by start.
using Runs = std::vector<std::pair<long, long>>;

Runs encode_rle(const BinaryMask &mask);
/// Throws InvalidArgument for overlapping, unsorted, row-crossing or out-of-range runs.
BinaryMask decode_rle(const Runs &runs, int height, int width);

/// {"format": "rle", "height": H, "width": W, "runs": [[start, length], ...]}
nlohmann::json rle_to_json(const BinaryMask &mask);
BinaryMask rle_from_json(const nlohmann::json &j);

} // namespace promptseg
