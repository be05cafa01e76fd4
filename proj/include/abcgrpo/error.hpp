#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace abcgrpo {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
  using Error::Error;
};

// A group with fewer than two members has no meaningful baseline.
class DegenerateGroup : public Error {
public:
  using Error::Error;
};

class NumericalFailure : public Error {
public:
  NumericalFailure(const std::string& what, std::size_t record)
      : Error(what + " (record " + std::to_string(record) + ")"), record_(record) {}

  std::size_t record() const noexcept { return record_; }

private:
  std::size_t record_;
};

class ConfigError : public Error {
public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(key) {}

  const std::string& key() const noexcept { return key_; }

private:
  std::string key_;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace abcgrpo
