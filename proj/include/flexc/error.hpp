// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <stdexcept>
#include <string>

namespace flexc {

// Base for all domain errors raised by the toolchain libraries. The CLI maps
// these to exit code 2 (usage/state problems) unless a more specific handler
// applies.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Lexer/parser failure in any of the three text formats (.mspec, .flexc,
// config). `kind` is a stable lowercase tag tests and tools can match on,
// e.g. "syntax", "duplicate-component", "unknown-modifier".
class ParseError : public Error {
public:
  ParseError(std::string kind, int line, int col, const std::string& msg)
      : Error("line " + std::to_string(line) + ", col " + std::to_string(col) +
              ": " + msg),
        kind_(std::move(kind)), line_(line), col_(col) {}

  const std::string& kind() const { return kind_; }
  int line() const { return line_; }
  int col() const { return col_; }

private:
  std::string kind_;
  int line_;
  int col_;
};

// Raised when a transformation or run is asked for an input that violates a
// structural precondition (unmapped library, placeholder left in an image,
// more gate arguments than registers, ...).
class BuildError : public Error {
public:
  BuildError(std::string kind, const std::string& msg)
      : Error(msg), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

} // namespace flexc
