#pragma once

#include <stdexcept>
#include <string>

namespace kama {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Geometric input that admits no answer (zero-norm directions, empty or
/// mismatched point sets, all-zero weights, coincident points).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// Point at or behind the camera plane (z <= 1e-6).
class BehindCamera : public Error {
 public:
  using Error::Error;
};

/// Container sizes inconsistent with the model (pose length, shape length,
/// vertex/keypoint counts).
class SizeMismatch : public Error {
 public:
  using Error::Error;
};

/// Malformed synthetic-body or synthetic-data specification.
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; message carries file/frame/field context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Keypoint name in a frame file that the model does not define.
class UnknownKeypointName : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Filesystem failure (open/write).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed Gaussian-mixture prior file.
class PriorLoadError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity encountered where a finite value is required.
class NonFinite : public Error {
 public:
  using Error::Error;
};

}  // namespace kama
