#include "dsanet/dstn.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dsanet/errors.hpp"

namespace dsanet::dstn {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'S', 'T', 'N'};

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw FormatError("DSTN: truncated stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write(std::ostream& os, const Tensor& t, Version version) {
  if (t.rank() > 255) throw FormatError("DSTN: rank exceeds 255");
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(version));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFull) throw FormatError("DSTN: dimension exceeds u32");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) {
    if (version == Version::F32) {
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!os) throw FormatError("DSTN: write failed");
}

Tensor read(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw FormatError("DSTN: bad magic");
  const auto version = get_le<std::uint8_t>(is);
  if (version != 1 && version != 2) throw FormatError("DSTN: unsupported version " + std::to_string(version));
  const auto rank = get_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_le<std::uint32_t>(is);
    if (d == 0) throw FormatError("DSTN: zero dimension");
  }
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) {
    if (version == 1) {
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is)));
    } else {
      v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

void save(const std::filesystem::path& path, const Tensor& t, Version version) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("DSTN: cannot open " + path.string() + " for writing");
  write(os, t, version);
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("DSTN: cannot open " + path.string());
  return read(is);
}

}  // namespace dsanet::dstn
