#pragma once

#include <stdexcept>
#include <string>

namespace cada {

/// Raised for any invalid shape, channel, or architecture combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed experiment config text; carries the offending key and line.
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(const std::string& message, std::string key, int line)
      : ConfigError(message), key_(std::move(key)), line_(line) {}

  const std::string& key() const { return key_; }
  int line() const { return line_; }

 private:
  std::string key_;
  int line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cada
