#pragma once

#include <stdexcept>
#include <string>

namespace safeadapt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, unknown layout, malformed file. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shapes or dimensions that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value was violated (negative half-width,
/// empty dataset, nonpositive temperature, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The source policy admits no certified region (the "bottom" outcome).
/// CLI exit code 3.
class CertificationRefused : public Error {
 public:
  CertificationRefused(const std::string& what, std::string failing_state)
      : Error(what), failing_state_(std::move(failing_state)) {}
  explicit CertificationRefused(const std::string& what) : Error(what) {}

  const std::string& failing_state() const noexcept { return failing_state_; }

 private:
  std::string failing_state_;
};

/// A runtime safety invariant was breached (e.g. projected iterate outside the
/// certified box). CLI exit code 4.
class InvariantBreach : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace safeadapt
