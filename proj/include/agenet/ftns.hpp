#pragma once

// FTNS tensor file format, little-endian throughout:
//
//   "FTNS" | version u32 | dtype u8 (1=float32, 2=float64) | rank u8 | dims u64[rank] | data
//
// Data is the row-major scalar buffer. Readers convert to the requested
// scalar type; same-dtype round trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "agenet/error.hpp"
#include "agenet/tensor.hpp"

namespace agenet::ftns {

inline constexpr char kMagic[4] = {'F', 'T', 'N', 'S'};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "FTNS I/O assumes a little-endian host");

namespace detail {

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is, const char* what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CorruptFileError(std::string("FTNS: truncated while reading ") + what);
  }
  return v;
}

}  // namespace detail

template <typename T>
void write(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > 255) throw ShapeError("FTNS: rank above 255");
  os.write(kMagic, 4);
  detail::put<std::uint32_t>(os, kVersion);
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("FTNS: write failed");
}

/// Number of bytes write() produces for a tensor of this shape and scalar type.
template <typename T>
std::size_t encoded_size(const Shape& shape) {
  return 4 + 4 + 1 + 1 + 8 * shape.size() + numel(shape) * sizeof(T);
}

template <typename T>
Tensor<T> read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw CorruptFileError("FTNS: truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptFileError("FTNS: bad magic");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kVersion) throw CorruptFileError("FTNS: unsupported version " + std::to_string(version));
  const auto code = detail::get<std::uint8_t>(is, "dtype");
  if (code != 1 && code != 2) throw CorruptFileError("FTNS: unknown dtype code " + std::to_string(code));
  const auto rank = detail::get<std::uint8_t>(is, "rank");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::get<std::uint64_t>(is, "dims"));

  const std::size_t n = numel(shape);
  auto read_as = [&](auto tag) {
    using S = decltype(tag);
    std::vector<S> buf(n);
    if (n && !is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(S)))) {
      throw CorruptFileError("FTNS: truncated data (expected " + std::to_string(n) + " scalars)");
    }
    return Tensor<T>(shape, std::vector<T>(buf.begin(), buf.end()));
  };
  return code == 1 ? read_as(float{}) : read_as(double{});
}

template <typename T>
void save(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write(os, t);
}

template <typename T>
Tensor<T> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read<T>(is);
}

}  // namespace agenet::ftns
