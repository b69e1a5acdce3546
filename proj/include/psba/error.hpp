#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace psba {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
 public:
  using Error::Error;
};

class DegenerateVector : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class InvalidEndpoints : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The oracle refused a query because its budget is spent. The decision is
/// never revealed and the counter stays at the budget.
class BudgetExhausted : public Error {
 public:
  explicit BudgetExhausted(std::uint64_t queries_used)
      : Error("query budget exhausted after " + std::to_string(queries_used) + " queries"),
        queries_used_(queries_used) {}
  std::uint64_t queries_used() const noexcept { return queries_used_; }

 private:
  std::uint64_t queries_used_;
};

/// Network failure after all retries were spent.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Local and remote query counters disagree. Query accounting is a
/// correctness property, so this is never retried.
class DesyncError : public Error {
 public:
  using Error::Error;
};

/// The estimator stopped before drawing all B samples.
class PartialEstimate : public Error {
 public:
  enum class Cause { Budget, Transport };

  PartialEstimate(Cause cause, std::size_t samples_consumed, const std::string& what)
      : Error("partial estimate after " + std::to_string(samples_consumed) + " samples: " + what),
        cause_(cause),
        samples_consumed_(samples_consumed) {}

  Cause cause() const noexcept { return cause_; }
  std::size_t samples_consumed() const noexcept { return samples_consumed_; }

 private:
  Cause cause_;
  std::size_t samples_consumed_;
};

/// Requested more principal components than the samples support.
class RankDeficient : public Error {
 public:
  RankDeficient(std::size_t requested, std::size_t achievable)
      : Error("requested " + std::to_string(requested) + " components but sample rank is " +
              std::to_string(achievable) + "; reduce k"),
        achievable_rank_(achievable) {}
  std::size_t achievable_rank() const noexcept { return achievable_rank_; }

 private:
  std::size_t achievable_rank_;
};

class NoValidPairs : public Error {
 public:
  using Error::Error;
};

}  // namespace psba
