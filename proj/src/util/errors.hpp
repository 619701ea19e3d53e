#pragma once

#include <stdexcept>
#include <string>

namespace licprune {

// Thrown when an operation is called before its preconditions were set up
// (e.g. measuring deltas before the baseline loss exists).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or broken numerical invariants.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structural mismatches: unknown layer ids, incompatible mask lengths, bad shapes.
class StructuralError : public std::runtime_error {
 public:
  explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

// File/serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace licprune
