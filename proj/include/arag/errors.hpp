#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace arag {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (parse errors name the offending line).
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Duplicate identifiers, inconsistent snapshots, broken cross-references.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad or missing configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Provider transport failure (network, HTTP status, malformed response envelope).
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The scripted provider had no rule matching a call. Always a test/setup bug.
class ScriptError : public Error {
 public:
  using Error::Error;
};

/// An agent's output does not match its documented grammar.
/// Carries the raw model text for auditing.
class AgentFormatError : public Error {
 public:
  AgentFormatError(const std::string& what, std::string raw_text)
      : Error(what), raw_text_(std::move(raw_text)) {}
  const std::string& raw_text() const { return raw_text_; }

 private:
  std::string raw_text_;
};

/// A judge's output does not match its documented JSON schema.
class JudgeFormatError : public AgentFormatError {
 public:
  using AgentFormatError::AgentFormatError;
};

}  // namespace arag
