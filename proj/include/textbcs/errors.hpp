#pragma once

#include <stdexcept>
#include <string>

namespace textbcs {

// Invalid or inconsistent configuration. The message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing, malformed or unwritable data on disk, or an impossible generation request.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training stopped because a loss became non-finite.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace textbcs
