#pragma once

#include <stdexcept>
#include <string>

namespace rbhomog {

/// Bad user input: configuration files, CLI arguments, incompatible run setups.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or truncated data file (mesh, snapshot set, model archive).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Nonlinear solve failed after exhausting substepping/retries.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// det(F) <= 0 at a material point; recoverable inside Newton via step halving.
class ElementInversion : public std::runtime_error {
 public:
  explicit ElementInversion(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rbhomog
