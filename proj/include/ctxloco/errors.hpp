#pragma once

#include <stdexcept>
#include <string>

namespace ctxloco {

// Bad caller-supplied value (out-of-range index, dimension mismatch, empty text).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid experiment configuration (budget too small, missing policy, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not allowed in the current state (step after done, resume a finished session).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A model reply that does not contain the required answer lines.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Transport-level failure talking to a chat-completion endpoint.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Translation gave up after exhausting retries on unparseable replies.
class TranslationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctxloco
