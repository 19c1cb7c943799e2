#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "dsanet/tensor.hpp"

// Binary tensor container:
//   "DSTN" | version u8 | rank u8 | dims u32 LE x rank | payload LE row-major
// Version 1 stores f32 payload (dumps, corpus frames). Version 2 stores f64
// payload and is used by checkpoints, which must round-trip bit-exactly.
namespace dsanet::dstn {

enum class Version : std::uint8_t { F32 = 1, F64 = 2 };

void write(std::ostream& os, const Tensor& t, Version version = Version::F32);
Tensor read(std::istream& is);

void save(const std::filesystem::path& path, const Tensor& t, Version version = Version::F32);
Tensor load(const std::filesystem::path& path);

}  // namespace dsanet::dstn
