#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <utility>

#include "psba/classifier.hpp"
#include "psba/error.hpp"
#include "psba/tensor.hpp"

namespace psba {

/// Label-only access to a model: each call to query() returns phi(x) in
/// {+1, -1} and counts exactly one query. Implementations must never
/// decrement the counter, and must throw BudgetExhausted (without revealing
/// a decision) once the budget is spent.
class MeteredOracle {
 public:
  virtual ~MeteredOracle() = default;

  virtual int query(const ImageTensor& x) = 0;
  virtual std::uint64_t queries_used() const = 0;
  virtual std::optional<std::uint64_t> budget() const = 0;

  std::optional<std::uint64_t> remaining() const {
    if (auto b = budget()) return *b - std::min(*b, queries_used());
    return std::nullopt;
  }
};

/// In-process oracle around a pure decision function. The counter is atomic
/// so concurrent callers see an exact total.
class LocalOracle final : public MeteredOracle {
 public:
  using Decision = std::function<int(const ImageTensor&)>;

  explicit LocalOracle(Decision decide, std::optional<std::uint64_t> budget = std::nullopt)
      : decide_(std::move(decide)), budget_(budget) {}

  int query(const ImageTensor& x) override {
    std::uint64_t current = count_.load(std::memory_order_relaxed);
    do {
      if (budget_ && current >= *budget_) throw BudgetExhausted(current);
    } while (!count_.compare_exchange_weak(current, current + 1, std::memory_order_relaxed));
    return decide_(x);
  }

  std::uint64_t queries_used() const override { return count_.load(std::memory_order_relaxed); }
  std::optional<std::uint64_t> budget() const override { return budget_; }

 private:
  Decision decide_;
  std::optional<std::uint64_t> budget_;
  std::atomic<std::uint64_t> count_{0};
};

/// Oracle answering phi_{x*} for a classifier and attack spec.
inline std::unique_ptr<LocalOracle> make_oracle(std::shared_ptr<const Classifier> model, AttackSpec spec,
                                                std::optional<std::uint64_t> budget = std::nullopt) {
  auto shared_spec = std::make_shared<const AttackSpec>(std::move(spec));
  return std::make_unique<LocalOracle>(
      [model = std::move(model), shared_spec](const ImageTensor& x) { return sign(*model, *shared_spec, x); },
      budget);
}

/// View of another oracle with its own, tighter cap. Queries still reach
/// (and are counted by) the inner oracle; this view counts only its own.
class CappedOracle final : public MeteredOracle {
 public:
  CappedOracle(MeteredOracle& inner, std::optional<std::uint64_t> cap) : inner_(inner), cap_(cap) {}

  int query(const ImageTensor& x) override {
    if (cap_ && used_ >= *cap_) throw BudgetExhausted(used_);
    const int s = inner_.query(x);
    ++used_;
    return s;
  }

  std::uint64_t queries_used() const override { return used_; }

  std::optional<std::uint64_t> budget() const override {
    auto inner_remaining = inner_.remaining();
    std::optional<std::uint64_t> b = cap_;
    if (inner_remaining) {
      const std::uint64_t via_inner = used_ + *inner_remaining;
      b = b ? std::min(*b, via_inner) : via_inner;
    }
    return b;
  }

 private:
  MeteredOracle& inner_;
  std::optional<std::uint64_t> cap_;
  std::uint64_t used_ = 0;
};

}  // namespace psba
