#pragma once

#include <stdexcept>
#include <string>

namespace agenet {

/// Incompatible tensor shapes or layer geometry.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf encountered where a finite value is required (losses, gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file on disk is truncated, has the wrong magic, or disagrees with its index.
class CorruptFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An image could not be decoded.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& path, const std::string& why)
      : std::runtime_error("cannot decode image '" + path + "': " + why), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Bad labels, empty datasets, missing keys.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace agenet
