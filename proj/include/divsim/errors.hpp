#pragma once

#include <stdexcept>
#include <string>

namespace divsim {

// Bad or inconsistent user-supplied configuration (tables, scenarios, configs).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric argument outside an operation's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `row()` is 1-based and counts the header line.
class IngestionError : public std::runtime_error {
 public:
  IngestionError(std::size_t row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Internal event ordering violated (clock moved backwards, update before arrival).
class OrderingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class PolicyContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class WindowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace divsim
