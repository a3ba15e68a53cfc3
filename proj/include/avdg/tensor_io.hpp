#pragma once

// Named-tensor container, all integers and floats little-endian:
//
//   magic    8 bytes  "AVDGTNS1"
//   count    u64
//   count records, in ascending name order:
//     name_len  u32, then name_len bytes of UTF-8
//     dtype     u8   (1 = float64)
//     rank      u32, then rank x u64 extents
//     data      product(extents) x float64, row-major

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "avdg/tensor.hpp"

namespace avdg {

using NamedTensors = std::map<std::string, Tensor>;

inline constexpr std::uint8_t kDtypeFloat64 = 1;

void write_tensors(std::ostream& os, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& is);

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

}  // namespace avdg
