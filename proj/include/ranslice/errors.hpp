#pragma once

#include <stdexcept>
#include <string>

namespace ranslice {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration; the message names the violated invariant.
struct ConfigError : Error {
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

/// Action is malformed or outside the allowed range.
struct ActionError : Error {
  using Error::Error;
};

/// Structured text (actor output, reflector verdict) failed to parse.
struct ParseError : Error {
  using Error::Error;
};

/// Persisted file is malformed.
struct FormatError : Error {
  FormatError(const std::string& message, std::size_t line)
      : Error(message + " (line " + std::to_string(line) + ")"), line_number(line) {}
  explicit FormatError(const std::string& message) : Error(message), line_number(0) {}
  std::size_t line_number;
};

/// Counterfactual replay requested outside the recorded window.
struct ReplayError : Error {
  using Error::Error;
};

/// Transport-level failure talking to a remote endpoint (retryable).
struct TransportError : Error {
  using Error::Error;
};

/// Remote endpoint returned a non-success status.
struct EndpointError : Error {
  using Error::Error;
};

/// Operation not supported by the selected policy backend.
struct CapabilityError : Error {
  using Error::Error;
};

/// Preference dataset has only positives or only negatives.
struct OneSidedDatasetError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace ranslice
