#pragma once

// 8-bit RGB images: decoding, bilinear resampling and conversion to [0,1]
// channel-last tensors. Binary/ASCII PPM is always available; JPEG decoding
// is compiled in when AGENET_WITH_JPEG is defined (links libjpeg).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "agenet/error.hpp"
#include "agenet/tensor.hpp"

#ifdef AGENET_WITH_JPEG
#include <csetjmp>
#include <jpeglib.h>
#endif

namespace agenet {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

namespace detail {

inline void skip_ppm_space(const std::vector<std::uint8_t>& b, std::size_t& i) {
  while (i < b.size()) {
    if (b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
    } else if (std::isspace(b[i])) {
      ++i;
    } else {
      break;
    }
  }
}

inline std::size_t read_ppm_int(const std::vector<std::uint8_t>& b, std::size_t& i, const std::string& path) {
  skip_ppm_space(b, i);
  if (i >= b.size() || !std::isdigit(b[i])) throw DecodeError(path, "malformed PPM header");
  std::size_t v = 0;
  while (i < b.size() && std::isdigit(b[i])) v = v * 10 + static_cast<std::size_t>(b[i++] - '0');
  return v;
}

}  // namespace detail

inline Image decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '3')) {
    throw DecodeError(path, "not a PPM file");
  }
  const bool binary = bytes[1] == '6';
  std::size_t i = 2;
  Image img;
  img.width = detail::read_ppm_int(bytes, i, path);
  img.height = detail::read_ppm_int(bytes, i, path);
  const std::size_t maxval = detail::read_ppm_int(bytes, i, path);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255) {
    throw DecodeError(path, "unsupported PPM geometry or depth");
  }
  const std::size_t n = img.width * img.height * 3;
  img.rgb.resize(n);
  if (binary) {
    ++i;  // single whitespace after maxval
    if (bytes.size() < i + n) throw DecodeError(path, "truncated PPM pixel data");
    for (std::size_t k = 0; k < n; ++k) img.rgb[k] = static_cast<std::uint8_t>(bytes[i + k] * 255 / maxval);
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t v = detail::read_ppm_int(bytes, i, path);
      if (v > maxval) throw DecodeError(path, "PPM sample above maxval");
      img.rgb[k] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  }
  return img;
}

#ifdef AGENET_WITH_JPEG
namespace detail {
struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}
}  // namespace detail

inline Image decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  jpeg_decompress_struct cinfo{};
  detail::JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(path, err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = cinfo.output_width;
  img.height = cinfo.output_height;
  img.rgb.resize(img.width * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}
#endif

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError(path, "cannot open file");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), {});
}

/// Chooses a decoder from the file's magic bytes.
inline Image decode_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3')) return decode_ppm(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
#ifdef AGENET_WITH_JPEG
    return decode_jpeg(bytes, path);
#else
    throw DecodeError(path, "JPEG support not compiled in (build with libjpeg)");
#endif
  }
  throw DecodeError(path, "unrecognised image format");
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

/// Bilinear resampling with half-pixel centres, returning values scaled to
/// [0,1] as an H x W x 3 tensor. Same-size requests skip interpolation.
template <typename T>
Tensor<T> resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (img.width == 0 || img.height == 0) throw ShapeError("resize of an empty image");
  Tensor<T> out(Shape{out_h, out_w, 3});
  if (out_h == img.height && out_w == img.width) {
    for (std::size_t i = 0; i < img.rgb.size(); ++i) out[i] = static_cast<T>(img.rgb[i]) / T{255};
    return out;
  }
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  auto coord = [](double src, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, extent - 1);
    frac = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    coord((static_cast<double>(y) + 0.5) * sy - 0.5, img.height, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      coord((static_cast<double>(x) + 0.5) * sx - 0.5, img.width, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bot = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out.at(y, x, c) = static_cast<T>(((1 - fy) * top + fy * bot) / 255.0);
      }
    }
  }
  return out;
}

/// Decodes `path` and returns a target x target x 3 tensor in [0,1].
template <typename T>
Tensor<T> prepare_image(const std::string& path, std::size_t target) {
  return resize_bilinear<T>(decode_image(path), target, target);
}

}  // namespace agenet
