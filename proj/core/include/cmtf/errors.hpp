#pragma once

#include <stdexcept>
#include <string>

namespace cmtf {

/// Malformed input file or unparsable argument. Messages carry the
/// offending line number where one exists.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally valid input that violates a contract (out-of-range index,
/// duplicate entry, shape mismatch, bad hyperparameter).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite parameter.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cmtf
