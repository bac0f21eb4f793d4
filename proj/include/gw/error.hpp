#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gw {

// Input/usage errors (bad file, bad flag, malformed molecule). The CLI maps
// these to exit code 1; everything else is a runtime failure (exit code 2).
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Syntax error in a SMILES string; carries the character offset.
class ParseError : public ValidationError {
public:
  ParseError(const std::string& msg, std::size_t position)
      : ValidationError(msg + " (at position " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const { return position_; }

private:
  std::size_t position_;
};

}  // namespace gw
