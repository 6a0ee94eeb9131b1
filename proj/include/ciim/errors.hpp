#pragma once

#include <stdexcept>
#include <string>

namespace ciim {

// Invalid configuration (weights, thresholds, scenario documents). Carries the
// JSON-style field path of the offending value when one is known.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message, std::string path = {})
      : std::invalid_argument(path.empty() ? message : path + ": " + message),
        message_(message),
        path_(std::move(path)) {}

  const std::string& message() const noexcept { return message_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string message_;
  std::string path_;
};

// A value outside the legal domain of an operation (e.g. resilience <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace ciim
