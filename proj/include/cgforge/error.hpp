#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cgforge {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad JSONL line, bad hex, missing field.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Input is well-formed but violates a data invariant (overlapping functions,
/// callsite outside code, empty corpus, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Two artifacts that must agree do not (vocabulary hash, architecture,
/// symbolization policy).
class MismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace cgforge
