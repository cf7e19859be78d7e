#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace ssnl {

// Non-fatal diagnostics (jitter applied, estimate clamped, ...) go to stderr so
// they never mix with data written to stdout.
inline void warn(const std::string& msg) { std::fprintf(stderr, "warning: %s\n", msg.c_str()); }

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/layer dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced by an operation; message carries the op name.
struct NumericError : Error {
  using Error::Error;
};

// Bad configuration value or malformed config/CSV input.
struct ConfigError : Error {
  using Error::Error;
};

// A simulator run failed (solver blow-up, invalid state); retried upstream.
struct SimulationError : Error {
  using Error::Error;
};

}  // namespace ssnl
