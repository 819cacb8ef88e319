#pragma once

#include <stdexcept>
#include <string>

namespace mvprior {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or mismatched files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Factorization failures, non-PD matrices, singular solves.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller passed inconsistent arguments (layout mismatch, empty sets, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Index outside a layout.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value. `path` names the offending field, e.g. "/trainer/C".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace mvprior
