#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "psba/classifier.hpp"
#include "psba/error.hpp"
#include "psba/estimator.hpp"
#include "psba/oracle.hpp"
#include "psba/projection.hpp"
#include "psba/rng.hpp"
#include "psba/tensor.hpp"

namespace psba {

// ---------------------------------------------------------------------------
// Boundary search

struct BoundaryResult {
  ImageTensor point;
  double parameter = 1.0;  // point = x* + parameter * (x_adv - x*)
  std::uint64_t queries = 0;
};

/// Number of bisections needed to pin the sign flip to a parameter interval
/// of width <= theta.
inline std::size_t bisection_steps(double theta) {
  if (!(theta > 0.0)) throw PreconditionError("binary search precision must be positive");
  std::size_t k = 0;
  double width = 1.0;
  while (width > theta) {
    width *= 0.5;
    ++k;
  }
  return k;
}

/// Bisection on the segment between an adversarial point and x*. Returns the
/// adversarial end of the final bracket. With verify set, both endpoints are
/// queried first (two extra queries) and InvalidEndpoints is thrown if they
/// do not straddle the boundary.
inline BoundaryResult binary_search_boundary(MeteredOracle& oracle, const ImageTensor& x_adv,
                                             const ImageTensor& target, double theta, bool verify = false) {
  if (x_adv.shape() != target.shape()) throw ShapeMismatch("binary search endpoints differ in shape");
  const std::size_t steps = bisection_steps(theta);
  BoundaryResult r{x_adv, 1.0, 0};
  if (verify) {
    r.queries += 2;
    if (oracle.query(x_adv) != 1) throw InvalidEndpoints("adversarial endpoint has sign -1");
    if (oracle.query(target) != -1) throw InvalidEndpoints("target endpoint has sign +1");
  }
  const ImageTensor diff = x_adv - target;
  if (norm(diff.values()) <= theta) return r;

  double lo = 0.0;  // sign -1
  double hi = 1.0;  // sign +1
  for (std::size_t i = 0; i < steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    const int s = oracle.query(target + mid * diff);
    ++r.queries;
    (s > 0 ? hi : lo) = mid;
  }
  r.parameter = hi;
  r.point = hi == 1.0 ? x_adv : target + hi * diff;
  return r;
}

// ---------------------------------------------------------------------------
// Step search

struct StepResult {
  ImageTensor point;  // x_hat
  double step = 0.0;  // accepted xi, or the last tried xi when stalled
  std::uint64_t queries = 0;
  std::size_t halvings = 0;
  bool stalled = false;
};

/// Tries x_t + xi * direction with xi = ||x_t - x*|| / sqrt(t), halving until
/// the point is adversarial. Gives up once xi < min_ratio * ||x_t - x*||.
inline StepResult geometric_step_search(MeteredOracle& oracle, const ImageTensor& x_t, const ImageTensor& direction,
                                        std::size_t t, const ImageTensor& target, double min_ratio = 1e-12) {
  if (t < 1) throw PreconditionError("step search iteration index starts at 1");
  const double dn = norm(direction.values());
  if (std::abs(dn - 1.0) > 1e-9) throw PreconditionError("step direction must be a unit vector");
  const double dist = distance(x_t, target);
  StepResult r;
  r.point = x_t;
  double xi = dist / std::sqrt(static_cast<double>(t));
  for (;;) {
    if (!(xi >= min_ratio * dist) || xi == 0.0) {
      r.stalled = true;
      r.point = x_t;
      return r;
    }
    ImageTensor candidate = x_t + xi * direction;
    ++r.queries;
    r.step = xi;
    if (oracle.query(candidate) > 0) {
      r.point = std::move(candidate);
      return r;
    }
    xi *= 0.5;
    ++r.halvings;
  }
}

// ---------------------------------------------------------------------------
// Attack loop

struct AttackConfig {
  std::size_t samples_per_step = 100;  // B
  std::optional<std::uint64_t> max_queries;
  std::optional<std::size_t> max_iterations;
  std::optional<double> theta;         // default (m sqrt m)^-1
  std::optional<double> delta;         // fixed delta; default ||x_t - x*|| / m
  std::uint64_t seed = 0;
  double success_mse = 1e-3;
  std::vector<std::uint64_t> query_caps;  // success flags are reported at these caps
  double min_step_ratio = 1e-12;

  double theta_for(std::size_t m) const {
    if (theta) return *theta;
    const double md = static_cast<double>(m);
    return 1.0 / (md * std::sqrt(md));
  }

  double delta_for(std::size_t m, double dist) const {
    if (delta) return *delta;
    return dist / static_cast<double>(m);
  }

  void validate() const {
    if (samples_per_step < 1) throw ConfigError("samples_per_step must be >= 1");
    if (!max_queries && !max_iterations) throw ConfigError("attack needs max_queries or max_iterations");
    if (theta && !(*theta > 0.0)) throw ConfigError("theta must be positive");
    if (delta && !(*delta > 0.0)) throw ConfigError("delta must be positive");
    if (!(success_mse > 0.0)) throw ConfigError("success_mse must be positive");
    if (!(min_step_ratio > 0.0)) throw ConfigError("min_step_ratio must be positive");
  }
};

struct IterationRecord {
  std::size_t t = 0;
  ImageTensor x;      // boundary point x_t
  ImageTensor x_hat;  // point the binary search started from (the source at t = 0)
  double mse = 0.0;
  std::uint64_t queries = 0;  // cumulative
  double step = 0.0;
  double delta = 0.0;
  std::optional<double> cosine;  // estimate vs true gradient at x_{t-1}
  std::uint64_t boundary_queries = 0;
  std::uint64_t estimation_queries = 0;
  std::uint64_t step_queries = 0;
  bool stalled = false;
};

enum class StopReason { Iterations, Budget };

struct AttackTrajectory {
  std::vector<IterationRecord> records;
  std::uint64_t queries_used = 0;  // includes queries of an interrupted final iteration
  StopReason stop = StopReason::Iterations;
  std::size_t latent_dim = 0;
  double theta = 0.0;

  bool empty() const { return records.empty(); }
  const IterationRecord& final_record() const {
    if (records.empty()) throw PreconditionError("trajectory has no records");
    return records.back();
  }
};

struct Whitebox {
  const Classifier& model;
  const AttackSpec& spec;
};

/// Checks the per-trajectory invariants. Returns a description of every
/// violation; empty means the trajectory is consistent.
inline std::vector<std::string> trajectory_violations(const AttackTrajectory& tr, const ImageTensor& target) {
  std::vector<std::string> out;
  std::uint64_t ledger = 0;
  for (std::size_t i = 0; i < tr.records.size(); ++i) {
    const auto& r = tr.records[i];
    ledger += r.boundary_queries + r.estimation_queries + r.step_queries;
    if (r.queries != ledger) out.push_back("query ledger mismatch at t=" + std::to_string(r.t));
    if (i > 0 && r.queries <= tr.records[i - 1].queries)
      out.push_back("cumulative queries not increasing at t=" + std::to_string(r.t));
    const double dx = distance(r.x, target);
    const double dh = distance(r.x_hat, target);
    if (dx > dh * (1.0 + 1e-12) + 1e-300) out.push_back("boundary contraction violated at t=" + std::to_string(r.t));
  }
  return out;
}

/// Projective boundary attack: binary search to the boundary, projected
/// gradient estimate, geometric step, repeat until the iteration limit or
/// the query budget. Budget exhaustion ends the run with the records of
/// every completed iteration. With a whitebox, source and target signs are
/// checked for free and each record carries the cosine against the true
/// gradient.
inline AttackTrajectory run_attack(MeteredOracle& base_oracle, const ImageTensor& target, const ImageTensor& source,
                                   const Projection& p, const AttackConfig& config,
                                   std::optional<Whitebox> whitebox = std::nullopt) {
  config.validate();
  if (source.shape() != target.shape() || source.shape() != p.output_shape())
    throw ShapeMismatch("source, target and projection shapes differ");
  if (whitebox) {
    if (sign(whitebox->model, whitebox->spec, source) != 1) throw InvalidEndpoints("source is not adversarial");
    if (sign(whitebox->model, whitebox->spec, target) != -1) throw InvalidEndpoints("target is already adversarial");
  }

  CappedOracle oracle(base_oracle, config.max_queries);
  const std::size_t m = p.latent_dim();
  AttackTrajectory tr;
  tr.latent_dim = m;
  tr.theta = config.theta_for(m);
  SeededRng rng(config.seed);
  std::uint64_t cumulative = 0;

  try {
    {
      auto b = binary_search_boundary(oracle, source, target, tr.theta);
      IterationRecord r;
      r.t = 0;
      r.x = std::move(b.point);
      r.x_hat = source;
      r.mse = mse(r.x, target);
      r.boundary_queries = b.queries;
      cumulative += b.queries;
      r.queries = cumulative;
      tr.records.push_back(std::move(r));
    }
    for (std::size_t t = 1; !config.max_iterations || t <= *config.max_iterations; ++t) {
      const ImageTensor& prev = tr.records.back().x;
      const double dist = distance(prev, target);
      IterationRecord r;
      r.t = t;
      r.delta = config.delta_for(m, dist);
      const auto est = estimate_gradient(oracle, prev, p, r.delta, config.samples_per_step, rng);
      r.estimation_queries = est.queries_used;

      const double en = norm(est.estimate.values());
      std::optional<StepResult> step;
      if (en > 0.0) {
        const ImageTensor direction = (1.0 / en) * est.estimate;
        if (whitebox) {
          const auto g = true_gradient(whitebox->model, whitebox->spec, prev).gradient;
          if (norm(g.values()) > 0.0) r.cosine = cosine_similarity(direction, g);
        }
        step = geometric_step_search(oracle, prev, direction, t, target, config.min_step_ratio);
      }
      if (step) {
        r.step_queries = step->queries;
        r.step = step->step;
        r.stalled = step->stalled;
        r.x_hat = std::move(step->point);
      } else {
        // all perturbations cancelled out; nothing to step along
        r.stalled = true;
        r.x_hat = prev;
      }
      auto b = binary_search_boundary(oracle, r.x_hat, target, tr.theta);
      r.boundary_queries = b.queries;
      r.x = std::move(b.point);
      r.mse = mse(r.x, target);
      cumulative += r.estimation_queries + r.step_queries + r.boundary_queries;
      r.queries = cumulative;
      tr.records.push_back(std::move(r));
    }
    tr.stop = StopReason::Iterations;
  } catch (const BudgetExhausted&) {
    tr.stop = StopReason::Budget;
  } catch (const PartialEstimate& e) {
    if (e.cause() != PartialEstimate::Cause::Budget) throw;
    tr.stop = StopReason::Budget;
  }
  tr.queries_used = oracle.queries_used();
  if (!trajectory_violations(tr, target).empty())
    throw Error("attack trajectory violates its invariants: " + trajectory_violations(tr, target).front());
  return tr;
}

/// In-process convenience: oracle from (model, spec) with the config's cap.
inline AttackTrajectory run_attack(const Classifier& model, const AttackSpec& spec, const ImageTensor& source,
                                   const Projection& p, const AttackConfig& config) {
  LocalOracle oracle([&](const ImageTensor& x) { return sign(model, spec, x); }, config.max_queries);
  return run_attack(oracle, spec.reference, source, p, config, Whitebox{model, spec});
}

/// Adversarial start found by a line search from x* along a random line
/// (both directions), doubling the radius until the decision flips. Uses the given
/// decision function directly, so no metered queries are spent.
inline ImageTensor synthetic_start(const std::function<int(const ImageTensor&)>& decide, const ImageTensor& target,
                                   SeededRng& rng, double initial_radius = 1.0, std::size_t max_doublings = 60) {
  if (!(initial_radius > 0.0)) throw PreconditionError("initial radius must be positive");
  std::vector<double> d(target.size());
  for (auto& v : d) v = rng.normal();
  const double dn = norm(d);
  if (!(dn > 0.0)) throw DegenerateVector("random direction is zero");
  const ImageTensor dir(target.shape(), std::move(d));
  double r = initial_radius;
  for (std::size_t i = 0; i <= max_doublings; ++i, r *= 2.0) {
    ImageTensor x = target + (r / dn) * dir;
    if (decide(x) > 0) return x;
    x = target + (-r / dn) * dir;
    if (decide(x) > 0) return x;
  }
  throw PreconditionError("no adversarial point found along the random direction");
}

inline ImageTensor synthetic_start(const Classifier& model, const AttackSpec& spec, SeededRng& rng,
                                   double initial_radius = 1.0) {
  return synthetic_start([&](const ImageTensor& x) { return sign(model, spec, x); }, spec.reference, rng,
                         initial_radius);
}

/// Fraction of runs that reach MSE <= threshold within query_cap queries.
inline double success_rate(const std::vector<AttackTrajectory>& runs, double threshold, std::uint64_t query_cap) {
  if (runs.empty()) throw PreconditionError("success rate of no runs");
  if (!(threshold > 0.0)) throw PreconditionError("success threshold must be positive");
  std::size_t hits = 0;
  for (const auto& run : runs) {
    const bool ok = std::any_of(run.records.begin(), run.records.end(), [&](const IterationRecord& r) {
      return r.queries <= query_cap && r.mse <= threshold;
    });
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(runs.size());
}

/// Smallest MSE reached within query_cap, if any record fits.
inline std::optional<double> mse_at(const AttackTrajectory& run, std::uint64_t query_cap) {
  std::optional<double> best;
  for (const auto& r : run.records)
    if (r.queries <= query_cap && (!best || r.mse < *best)) best = r.mse;
  return best;
}

/// First cumulative query count at which MSE <= threshold.
inline std::optional<std::uint64_t> queries_to_reach(const AttackTrajectory& run, double threshold) {
  for (const auto& r : run.records)
    if (r.mse <= threshold) return r.queries;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Export

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// CSV with header iter,queries,mse,step,cosine. The cosine column is blank
/// when no whitebox was available; step is blank for the initial record.
inline std::string trajectory_csv(const AttackTrajectory& tr) {
  std::string out = "iter,queries,mse,step,cosine\n";
  for (const auto& r : tr.records) {
    out += std::to_string(r.t) + "," + std::to_string(r.queries) + "," + format_double(r.mse) + ",";
    if (r.t > 0) out += format_double(r.step);
    out += ",";
    if (r.cosine) out += format_double(*r.cosine);
    out += "\n";
  }
  return out;
}

inline nlohmann::json trajectory_summary(const AttackTrajectory& tr, const AttackConfig& config) {
  nlohmann::json j;
  j["iterations"] = tr.records.empty() ? 0 : tr.records.back().t;
  j["queries_used"] = tr.queries_used;
  j["stop_reason"] = tr.stop == StopReason::Budget ? "budget" : "iterations";
  j["latent_dim"] = tr.latent_dim;
  j["theta"] = tr.theta;
  j["success_mse"] = config.success_mse;
  if (tr.records.empty()) {
    j["initial_mse"] = nullptr;
    j["final_mse"] = nullptr;
  } else {
    j["initial_mse"] = tr.records.front().mse;
    j["final_mse"] = tr.records.back().mse;
  }
  std::size_t stalled = 0;
  for (const auto& r : tr.records) stalled += r.stalled ? 1 : 0;
  j["stalled_steps"] = stalled;
  auto caps = nlohmann::json::array();
  for (auto cap : config.query_caps) {
    const auto best = mse_at(tr, cap);
    caps.push_back({{"cap", cap},
                    {"mse", best ? nlohmann::json(*best) : nlohmann::json(nullptr)},
                    {"success", best && *best <= config.success_mse}});
  }
  j["caps"] = caps;
  return j;
}

// ---------------------------------------------------------------------------
// Optimal-scale search

/// Walks candidates in order while the score does not get worse (<=) and
/// returns the last index before the first increase.
inline std::size_t progressive_search(std::size_t count, const std::function<double(std::size_t)>& evaluate) {
  if (count == 0) throw PreconditionError("progressive search over no candidates");
  double lowest = evaluate(0);
  for (std::size_t i = 1; i < count; ++i) {
    const double current = evaluate(i);
    if (current <= lowest) {
      lowest = current;
    } else {
      return i - 1;
    }
  }
  return count - 1;
}

struct ValidationPair {
  ImageTensor source;  // adversarial start
  ImageTensor target;  // x*
};

using OracleFactory = std::function<std::unique_ptr<MeteredOracle>(const ValidationPair&)>;

struct ScaleSearchConfig {
  std::size_t steps = 10;
  std::size_t samples_per_step = 100;
  std::uint64_t seed = 0;
};

struct ScaleReport {
  std::string scale;
  std::size_t latent_dim = 0;
  double average_mse = 0.0;
  std::vector<std::uint64_t> pair_queries;  // total per pair
  std::uint64_t initial_boundary_queries = 0;  // the t = 0 search onto the boundary
  std::uint64_t boundary_queries = 0;          // searches after each step
  std::uint64_t estimation_queries = 0;
  std::uint64_t step_queries = 0;
};

struct ScaleSearchResult {
  std::size_t index = 0;
  std::vector<ScaleReport> evaluated;  // in schedule order, up to the stopping scale
  std::vector<std::string> warnings;
  std::size_t valid_pairs = 0;
  std::uint64_t validation_queries = 0;
};

/// Progressive optimal-scale search: at each scale run a short attack on
/// every valid pair, compare the average final MSE against the previous
/// scale and stop at the first increase. Every scale reuses the per-pair
/// seeds, so scales are compared on common random numbers.
inline ScaleSearchResult find_optimal_scale(const OracleFactory& factory, const std::vector<ValidationPair>& pairs,
                                            const ScaleSchedule& schedule, const ScaleSearchConfig& config = {}) {
  if (schedule.size() == 0) throw PreconditionError("empty scale schedule");
  ScaleSearchResult result;
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto check = factory(pairs[i]);
    const bool ok = check->query(pairs[i].source) == 1 && check->query(pairs[i].target) == -1;
    result.validation_queries += check->queries_used();
    if (ok) {
      valid.push_back(i);
    } else {
      result.warnings.push_back("pair " + std::to_string(i) + " skipped: endpoints do not straddle the boundary");
    }
  }
  if (valid.empty()) throw NoValidPairs("no validation pair satisfies the attack preconditions");
  result.valid_pairs = valid.size();

  AttackConfig ac;
  ac.samples_per_step = config.samples_per_step;
  ac.max_iterations = config.steps;

  result.index = progressive_search(schedule.size(), [&](std::size_t s) {
    const Projection& p = schedule[s];
    ScaleReport rep;
    rep.scale = p.describe();
    rep.latent_dim = p.latent_dim();
    double total = 0.0;
    for (auto i : valid) {
      auto oracle = factory(pairs[i]);
      AttackConfig cfg = ac;
      cfg.seed = derive_seed(config.seed, i);
      const auto tr = run_attack(*oracle, pairs[i].target, pairs[i].source, p, cfg);
      if (tr.records.empty()) throw Error("scale search attack produced no records");
      total += tr.records.back().mse;
      rep.pair_queries.push_back(tr.queries_used);
      for (const auto& r : tr.records) {
        (r.t == 0 ? rep.initial_boundary_queries : rep.boundary_queries) += r.boundary_queries;
        rep.estimation_queries += r.estimation_queries;
        rep.step_queries += r.step_queries;
      }
    }
    rep.average_mse = total / static_cast<double>(valid.size());
    result.evaluated.push_back(rep);
    return rep.average_mse;
  });
  return result;
}

}  // namespace psba
