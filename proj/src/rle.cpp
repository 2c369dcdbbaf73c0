#include "promptseg/rle.hpp"

namespace promptseg {

Runs encode_rle(const BinaryMask &mask)
{
  Runs runs;
  const long w = mask.width();
  for (int r = 0; r < mask.height(); ++r) {
    int c = 0;
    while (c < mask.width()) {
      if (!mask(r, c)) {
        ++c;
        continue;
      }
      const int begin = c;
      while (c < mask.width() && mask(r, c)) {
        ++c;
      }
      runs.emplace_back(r * w + begin, c - begin);
    }
  }
  return runs;
}

BinaryMask decode_rle(const Runs &runs, int height, int width)
{
  BinaryMask mask(height, width);
  long previous_end = -1;
  for (const auto &[start, length] : runs) {
    if (length < 1 || start < 0 || start + length > static_cast<long>(mask.size())) {
      throw InvalidArgument("RLE run out of range");
    }
    // A run may touch the previous one only across a row boundary.
    if (start < previous_end || (start == previous_end && start % width != 0)) {
      throw InvalidArgument("RLE runs must be sorted and non-adjacent within a row");
    }
    if (start / width != (start + length - 1) / width) {
      throw InvalidArgument("RLE run crosses a row boundary");
    }
    for (long i = start; i < start + length; ++i) {
      mask[static_cast<size_t>(i)] = 1;
    }
    previous_end = start + length;
  }
  return mask;
}

nlohmann::json rle_to_json(const BinaryMask &mask)
{
  nlohmann::json runs = nlohmann::json::array();
  for (const auto &[s, l] : encode_rle(mask)) {
    runs.push_back({s, l});
  }
  return {{"format", "rle"}, {"height", mask.height()}, {"width", mask.width()}, {"runs", runs}};
}

BinaryMask rle_from_json(const nlohmann::json &j)
{
  try {
    Runs runs;
    for (const auto &r : j.at("runs")) {
      runs.emplace_back(r.at(0).get<long>(), r.at(1).get<long>());
    }
    return decode_rle(runs, j.at("height").get<int>(), j.at("width").get<int>());
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument(std::string("malformed RLE payload: ") + e.what());
  }
}

} // namespace promptseg
