#pragma once

#include <stdexcept>
#include <string>

namespace avsynth {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A tensor, image or sequence has the wrong shape or length.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration value or call argument is out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

// A training stage was requested before the stages it depends on.
class DependencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace avsynth
