#pragma once

#include <stdexcept>
#include <string>

namespace gfl {

// Invalid configuration or input data.  The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A transport problem with no solution (mass/mean mismatch, disconnected
// support).  The CLI maps this to exit code 3.
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& msg, int interval = -1)
      : std::runtime_error(msg), interval_(interval) {}

  // Index of the offending path interval, or -1 when not interval-specific.
  int interval() const { return interval_; }

 private:
  int interval_;
};

// Filesystem or serialization failure.  The CLI maps this to exit code 1.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gfl
