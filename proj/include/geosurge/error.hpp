#pragma once

#include <stdexcept>
#include <string>

namespace geosurge {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags, bad configuration, schema violations. CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data: file formats, shapes, value domains.
// CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// Cross-artifact consistency failures, e.g. a checkpoint trained against a
// different hierarchy file. CLI exit code 3.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace geosurge
