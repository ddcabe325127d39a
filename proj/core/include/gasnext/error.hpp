#pragma once

#include <stdexcept>
#include <string>

namespace gasnext {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: config keys, arguments, preconditions on counts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed files on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::string snapshot)
      : Error(what), snapshot_path_(std::move(snapshot)) {}
  const std::string& snapshot_path() const noexcept { return snapshot_path_; }

 private:
  std::string snapshot_path_;
};

}  // namespace gasnext
