#pragma once

#include <stdexcept>
#include <string>

namespace korol {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector / matrix / tensor shapes disagree with a spec or architecture.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Normal equations are singular (ridge = 0 with rank-deficient data).
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

// Malformed or corrupt file contents (bad magic, checksum, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or unusable training / evaluation data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace korol
