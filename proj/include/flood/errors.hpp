#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flood {

/// Shape or size disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Solver produced NaN/Inf or exceeded a physical guard.
class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(const std::string& what, std::size_t cell, double sim_time)
      : std::runtime_error(what + " (cell " + std::to_string(cell) +
                           ", t=" + std::to_string(sim_time) + " s)"),
        cell_(cell),
        sim_time_(sim_time) {}

  std::size_t cell() const noexcept { return cell_; }
  double sim_time() const noexcept { return sim_time_; }

 private:
  std::size_t cell_;
  double sim_time_;
};

/// Sub-stepping failed to reach the next output time within the step budget.
class StagnationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed container/CSV/config input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Autodiff tape misuse (reuse after backward, non-scalar loss).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class RolloutError : public std::runtime_error {
 public:
  RolloutError(const std::string& what, std::size_t pass)
      : std::runtime_error(what + " (pass " + std::to_string(pass) + ")"), pass_(pass) {}
  std::size_t pass() const noexcept { return pass_; }

 private:
  std::size_t pass_;
};

}  // namespace flood
