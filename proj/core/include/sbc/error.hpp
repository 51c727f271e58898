#pragma once

#include <stdexcept>
#include <string>

namespace sbc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied argument: dimension mismatch, invalid config value.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A file on disk does not match its declared format (magic, sizes, fields).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Open/read/write failure at the OS level.
class IoError : public Error {
 public:
  using Error::Error;
};

// KoLeo batch with a zero nearest-neighbour distance.
class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

// Operation not available for the object (e.g. box extraction on a scan-only model).
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but cannot be acted on (e.g. no positive labels).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace sbc
