#pragma once

#include <stdexcept>
#include <string>

namespace pointseg {

// Invalid configuration values (dimensions, thresholds, unknown config keys).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent input data; the message names the file or
// image_id and the offense.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Training aborted (non-finite loss, unlearnable pair balance, ...).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor dimension mismatch in network operations.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Low-volume diagnostics to stderr. Value-returning code paths that swallow a
// degenerate case (empty point set, no foreground classes) report through
// this instead of failing.
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void set_log_quiet(bool quiet);

}  // namespace pointseg
