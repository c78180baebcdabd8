#pragma once

#include <stdexcept>
#include <string>

namespace pdsim {

// Error taxonomy: each class maps to one CLI exit code (see cli.hpp).

class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

class SimulationError : public std::runtime_error {
 public:
  explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class AccountingError : public std::runtime_error {
 public:
  explicit AccountingError(const std::string& what) : std::runtime_error(what) {}
};

class ComparisonError : public std::runtime_error {
 public:
  explicit ComparisonError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Placement infeasibility carries the binding constraint so callers can
// report it without string parsing.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(std::string constraint, const std::string& what)
      : std::runtime_error(what), constraint_(std::move(constraint)) {}

  const std::string& binding_constraint() const { return constraint_; }

 private:
  std::string constraint_;
};

}  // namespace pdsim
