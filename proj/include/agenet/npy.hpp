#pragma once

// Reader for NumPy .npy arrays (C order, little-endian float/int), used to
// import embeddings computed outside this library.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "agenet/error.hpp"
#include "agenet/tensor.hpp"

namespace agenet::npy {

namespace detail {

inline std::string dict_value(const std::string& header, const std::string& key, const std::string& path) {
  const auto k = header.find("'" + key + "'");
  if (k == std::string::npos) throw CorruptFileError("npy '" + path + "': header lacks " + key);
  auto v = header.find(':', k);
  if (v == std::string::npos) throw CorruptFileError("npy '" + path + "': malformed header");
  ++v;
  while (v < header.size() && header[v] == ' ') ++v;
  if (v >= header.size()) throw CorruptFileError("npy '" + path + "': malformed header");
  const char open = header[v];
  const char close = open == '(' ? ')' : open == '\'' ? '\'' : ',';
  const auto end = header.find(close, v + 1);
  if (end == std::string::npos) throw CorruptFileError("npy '" + path + "': malformed header");
  return open == '(' || open == '\'' ? header.substr(v + 1, end - v - 1) : header.substr(v, end - v);
}

template <typename S, typename T>
void convert(std::istream& is, std::vector<T>& out, std::size_t n, const std::string& path) {
  std::vector<S> buf(n);
  if (n && !is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(S)))) {
    throw CorruptFileError("npy '" + path + "': truncated data");
  }
  out.assign(buf.begin(), buf.end());
}

}  // namespace detail

template <typename T>
Tensor<T> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw CorruptFileError("npy '" + path + "': bad magic");
  unsigned char ver[2];
  if (!is.read(reinterpret_cast<char*>(ver), 2)) throw CorruptFileError("npy '" + path + "': truncated header");
  std::uint32_t hlen = 0;
  if (ver[0] == 1) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw CorruptFileError("npy '" + path + "': truncated header");
    hlen = b[0] | (b[1] << 8);
  } else if (ver[0] == 2 || ver[0] == 3) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CorruptFileError("npy '" + path + "': truncated header");
    hlen = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  } else {
    throw CorruptFileError("npy '" + path + "': unsupported version " + std::to_string(ver[0]));
  }
  std::string header(hlen, '\0');
  if (!is.read(header.data(), hlen)) throw CorruptFileError("npy '" + path + "': truncated header");

  const std::string descr = detail::dict_value(header, "descr", path);
  if (detail::dict_value(header, "fortran_order", path).find("True") != std::string::npos) {
    throw CorruptFileError("npy '" + path + "': Fortran-order arrays are not supported");
  }
  Shape shape;
  const std::string dims = detail::dict_value(header, "shape", path);
  std::size_t pos = 0;
  while (pos < dims.size()) {
    while (pos < dims.size() && (dims[pos] == ' ' || dims[pos] == ',')) ++pos;
    if (pos >= dims.size()) break;
    std::size_t used = 0;
    shape.push_back(std::stoull(dims.substr(pos), &used));
    pos += used;
  }
  const std::size_t n = numel(shape);
  std::vector<T> data;
  if (descr == "<f4") detail::convert<float>(is, data, n, path);
  else if (descr == "<f8") detail::convert<double>(is, data, n, path);
  else if (descr == "<i4") detail::convert<std::int32_t>(is, data, n, path);
  else if (descr == "<i8") detail::convert<std::int64_t>(is, data, n, path);
  else throw CorruptFileError("npy '" + path + "': unsupported dtype " + descr);
  return Tensor<T>(shape, std::move(data));
}

/// Writes a float64 (T=double) or float32 array, version 1.0.
template <typename T>
void save(const std::string& path, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::string dims;
  for (std::size_t i = 0; i < t.rank(); ++i) dims += (i ? ", " : "") + std::to_string(t.dim(i));
  if (t.rank() == 1) dims += ',';
  std::string header = std::string("{'descr': '") + (std::is_same_v<T, float> ? "<f4" : "<f8") +
                       "', 'fortran_order': False, 'shape': (" + dims + "), }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write("\x93NUMPY\x01\x00", 8);
  const auto hl = static_cast<std::uint16_t>(header.size());
  const char hb[2] = {static_cast<char>(hl & 0xff), static_cast<char>(hl >> 8)};
  os.write(hb, 2);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

}  // namespace agenet::npy
