#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "promptseg/autograd.hpp"

namespace promptseg {

using Bytes = std::vector<std::uint8_t>;

/// Uncompressed ZIP archive (method 0) with CRC-32 per entry and fixed timestamps,
/// so identical contents give identical bytes.
Bytes write_zip(const std::vector<std::pair<std::string, Bytes>> &entries);
/// Throws DataError on a truncated archive, unsupported method or CRC mismatch.
std::map<std::string, Bytes> read_zip(const Bytes &archive, const std::string &source);

/// NumPy .npy v1.0, little-endian float64, C order, 2-D.
Bytes encode_npy(const ag::Matrix &m);
ag::Matrix decode_npy(const Bytes &bytes, const std::string &source);

} // namespace promptseg
