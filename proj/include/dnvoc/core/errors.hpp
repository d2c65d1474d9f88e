// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace dnvoc {

// Root of every error raised by the library. `kind()` is a stable,
// machine-readable tag used by the CLI's error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Non-finite samples, empty signals, out-of-range targets.
struct InputError : Error {
  explicit InputError(const std::string& w) : Error("input_error", w) {}
};

// Invalid STFT/model/training configuration, including COLA/NOLA failures.
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config_error", w) {}
};

// Mismatched array shapes or configs between paired inputs.
struct MismatchError : Error {
  explicit MismatchError(const std::string& w) : Error("mismatch_error", w) {}
};

// Unreadable or malformed files.
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io_error", w) {}
};

// Checkpoint cannot be used with the requested configuration.
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& w) : Error("checkpoint_error", w) {}
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

}  // namespace dnvoc
