#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "psba/attack.hpp"
#include "psba/error.hpp"

namespace psba {

struct BoundParams {
  std::size_t m = 2;
  std::size_t n = 2;
  double delta = 0.0;
  double theta = 0.0;
  double beta_S = 0.0;
  double beta_f = 0.0;
  std::vector<double> alphas;  // alphas[0] is alpha_1
  double grad_norm = 1.0;
  double proj_norm = 1.0;
  std::size_t B = 100;
  double p = 0.05;

  /// All alphas equal to one, the setting of the numerical curves.
  static BoundParams isotropic(std::size_t m, std::size_t n) {
    BoundParams b;
    b.m = m;
    b.n = n;
    b.alphas.assign(m, 1.0);
    return b;
  }

  double alpha1() const { return alphas.at(0); }
  double alpha_max() const { return *std::max_element(alphas.begin(), alphas.end()); }

  double sum_sq(std::size_t from) const {
    double s = 0.0;
    for (std::size_t i = from; i < alphas.size(); ++i) s += alphas[i] * alphas[i];
    return s;
  }

  void validate() const {
    if (alphas.size() != m) throw PreconditionError("alphas must have exactly m entries");
    if (m == 0 || m > n) throw PreconditionError("need 1 <= m <= n");
    if (!(alphas[0] > 0.0)) throw PreconditionError("alpha_1 must be positive");
    for (double a : alphas)
      if (!(a >= 0.0)) throw PreconditionError("alphas must be non-negative");
    if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
    if (!(theta >= 0.0)) throw PreconditionError("theta must be non-negative");
    if (!(beta_S >= 0.0) || !(beta_f >= 0.0)) throw PreconditionError("smoothness constants must be non-negative");
    if (!(grad_norm > 0.0)) throw PreconditionError("gradient norm must be positive");
    if (!(proj_norm >= 0.0) || proj_norm > grad_norm * (1.0 + 1e-12))
      throw PreconditionError("projected gradient norm must lie in [0, grad_norm]");
    if (B < 1) throw PreconditionError("B must be >= 1");
    if (!(p > 0.0 && p < 1.0)) throw PreconditionError("p must lie in (0, 1)");
  }
};

struct BoundValue {
  double value = 0.0;
  bool vacuous = false;  // value < 0: the bound says nothing
};

inline BoundValue make_bound(double v) { return {v, v < 0.0}; }

inline double gamma(const BoundParams& b) {
  b.validate();
  if (!(b.proj_norm > 0.0)) throw PreconditionError("gamma is undefined for a zero projected gradient");
  const double a = b.alpha_max() + 0.5 * b.delta * b.beta_f;
  return b.beta_f + (b.beta_S * a * a + b.beta_S * b.theta * b.theta / (b.delta * b.delta)) / b.proj_norm;
}

namespace detail {

inline double bound_inner(const BoundParams& b, bool sampling_term) {
  if (b.m < 2) throw PreconditionError("bound needs m >= 2");
  const double g = gamma(b);
  const double a1 = b.alpha1();
  const double mm1 = static_cast<double>(b.m - 1);
  double inner = b.delta * g * g / a1 + (g / a1) * std::sqrt(b.sum_sq(1) / mm1) + 1.58 * b.beta_f / std::sqrt(mm1) +
                 (g * b.theta / (a1 * b.delta)) * (b.grad_norm / b.proj_norm);
  if (sampling_term) {
    const double md = static_cast<double>(b.m);
    inner += (1.0 / b.delta) * std::sqrt(b.sum_sq(0)) *
             std::sqrt((2.0 / static_cast<double>(b.B)) * std::log(md / b.p)) / std::sqrt(mm1);
  }
  return inner;
}

inline BoundValue bracket(const BoundParams& b, double inner) {
  const double mm1 = static_cast<double>(b.m - 1);
  const double a1 = b.alpha1();
  const double factor = mm1 * mm1 * b.delta * b.delta / (8.0 * a1 * a1);
  return make_bound((b.proj_norm / b.grad_norm) * (1.0 - factor * inner * inner));
}

}  // namespace detail

/// Lower bound on the cosine between the expected estimate and the true
/// gradient.
inline BoundValue expectation_bound(const BoundParams& b) {
  return detail::bracket(b, detail::bound_inner(b, false));
}

/// Lower bound holding with probability 1 - p for a single estimate.
inline BoundValue concentration_bound(const BoundParams& b) {
  return detail::bracket(b, detail::bound_inner(b, true));
}

/// Bounds for a point exactly on the boundary: the theta = 0 instances.
inline BoundValue boundary_expectation_bound(BoundParams b) {
  b.theta = 0.0;
  return expectation_bound(b);
}

inline BoundValue boundary_concentration_bound(BoundParams b) {
  b.theta = 0.0;
  return concentration_bound(b);
}

/// Identity-projection bound of the earlier full-space estimator.
inline BoundValue hsja_bound(const BoundParams& b) {
  if (!(b.grad_norm > 0.0)) throw PreconditionError("gradient norm must be positive");
  const double n = static_cast<double>(b.n);
  return make_bound(1.0 - 9.0 * b.beta_S * b.beta_S * b.delta * b.delta * n * n / (8.0 * b.grad_norm * b.grad_norm));
}

/// Simplified at-boundary identity-projection form with constant 1/2.
inline BoundValue identity_boundary_bound(const BoundParams& b) {
  if (!(b.grad_norm > 0.0)) throw PreconditionError("gradient norm must be positive");
  const double nm1 = static_cast<double>(b.n) - 1.0;
  return make_bound(1.0 - nm1 * nm1 * b.delta * b.delta * b.beta_S * b.beta_S / (2.0 * b.grad_norm * b.grad_norm));
}

/// Euler beta function through log-gamma.
inline double beta_fn(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw PreconditionError("beta function needs positive arguments");
  return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

/// E|v_1| for v uniform on the unit sphere in R^m.
inline double beta_mean_abs_v1(std::size_t m) {
  if (m < 2) throw PreconditionError("needs m >= 2");
  const double mm1 = static_cast<double>(m - 1);
  return 2.0 / (mm1 * beta_fn(0.5, mm1 / 2.0));
}

/// Upper bound on the probability that the sampled direction lands in the
/// sign-ambiguous band of half-width w, clamped to [0, 1].
inline double p_upper(double w, double alpha1, double proj_norm, std::size_t m) {
  if (m < 2) throw PreconditionError("needs m >= 2");
  if (!(alpha1 > 0.0) || !(proj_norm > 0.0)) throw PreconditionError("alpha_1 and proj_norm must be positive");
  if (!(w >= 0.0)) throw PreconditionError("band width must be non-negative");
  const double v = 2.0 * w / (beta_fn(0.5, static_cast<double>(m - 1) / 2.0) * alpha1 * proj_norm);
  return std::clamp(v, 0.0, 1.0);
}

/// Order-of-magnitude form with an explicit constant C for the hidden O(.).
/// The sampling term uses alpha_1 squared.
inline BoundValue bigO_bound(const BoundParams& b, double C = 1.0) {
  b.validate();
  if (b.m < 2) throw PreconditionError("bound needs m >= 2");
  if (!(b.proj_norm > 0.0)) throw PreconditionError("bound is undefined for a zero projected gradient");
  if (!(C >= 0.0)) throw PreconditionError("calibration constant must be non-negative");
  const double md = static_cast<double>(b.m);
  const double a1 = b.alpha1();
  const double a1_4 = a1 * a1 * a1 * a1;
  const double amax = b.alpha_max();
  const double amax_4 = amax * amax * amax * amax;
  const double d2 = b.delta * b.delta;
  const double spread = b.sum_sq(1) / (md - 1.0);
  const double terms = d2 * b.beta_f * b.beta_f / a1_4 +
                       (amax_4 / a1_4) * d2 * b.beta_S * b.beta_S / (b.proj_norm * b.proj_norm) +
                       std::log(md / b.p) / (static_cast<double>(b.B) * a1 * a1);
  return make_bound((b.proj_norm / b.grad_norm) * (1.0 - C * md * md * spread * terms));
}

// ---------------------------------------------------------------------------
// Numerical optimal-scale curves

/// Per-direction gradient energy, strongest first: e_i ~ (n + 1 - i)^degree.
inline std::vector<double> quadratic_profile(std::size_t n, double degree = 2.0) {
  if (n < 1) throw PreconditionError("profile needs n >= 1");
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::pow(static_cast<double>(n - i), degree);
  return e;
}

/// e_i ~ exp(-rate * i).
inline std::vector<double> exponential_profile(std::size_t n, double rate = 1.0) {
  if (n < 1) throw PreconditionError("profile needs n >= 1");
  if (!(rate > 0.0)) throw PreconditionError("decay rate must be positive");
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::exp(-rate * static_cast<double>(i + 1));
  return e;
}

enum class ScaleObjective { Expectation, Concentration, BigO, SimplifiedLinear };

inline std::string to_string(ScaleObjective o) {
  switch (o) {
    case ScaleObjective::Expectation: return "expectation";
    case ScaleObjective::Concentration: return "concentration";
    case ScaleObjective::BigO: return "big_o";
    case ScaleObjective::SimplifiedLinear: return "simplified";
  }
  return "?";
}

inline ScaleObjective scale_objective_from_string(const std::string& s) {
  if (s == "expectation") return ScaleObjective::Expectation;
  if (s == "concentration") return ScaleObjective::Concentration;
  if (s == "big_o") return ScaleObjective::BigO;
  if (s == "simplified") return ScaleObjective::SimplifiedLinear;
  throw ConfigError("unknown bound form '" + s + "'");
}

struct ScaleCandidate {
  std::size_t m = 0;
  double proj_norm = 0.0;
  double beta_f = 0.0;
  std::vector<double> alphas;  // empty: all ones
  std::optional<double> delta;  // overrides base.delta
};

/// Objective value for one candidate; `base` supplies n, delta, theta,
/// beta_S, grad_norm, B and p.
inline double scale_objective_value(const ScaleCandidate& c, const BoundParams& base, ScaleObjective objective,
                                    double C = 1.0) {
  if (objective == ScaleObjective::SimplifiedLinear) {
    if (c.m < 1) throw PreconditionError("candidate needs m >= 1");
    if (!(base.grad_norm > 0.0)) throw PreconditionError("gradient norm must be positive");
    const double md = static_cast<double>(c.m);
    return (c.proj_norm / base.grad_norm) * (1.0 - C * md * md * std::log(md / base.p));
  }
  BoundParams b = base;
  b.m = c.m;
  b.proj_norm = c.proj_norm;
  b.beta_f = c.beta_f;
  if (c.delta) b.delta = *c.delta;
  b.alphas = c.alphas.empty() ? std::vector<double>(c.m, 1.0) : c.alphas;
  switch (objective) {
    case ScaleObjective::Expectation:
      return expectation_bound(b).value;
    case ScaleObjective::Concentration:
      return concentration_bound(b).value;
    case ScaleObjective::BigO:
      return bigO_bound(b, C).value;
    case ScaleObjective::SimplifiedLinear:
      break;
  }
  throw PreconditionError("unknown objective");
}

/// argmax over the family; ties go to the smaller m.
inline std::size_t optimal_scale_objective(const std::vector<ScaleCandidate>& family, const BoundParams& base,
                                           ScaleObjective objective, double C = 1.0) {
  if (family.empty()) throw PreconditionError("empty scale family");
  std::optional<double> best_value;
  std::size_t best_m = 0;
  for (const auto& c : family) {
    const double v = scale_objective_value(c, base, objective, C);
    if (!best_value || v > *best_value || (v == *best_value && c.m < best_m)) {
      best_value = v;
      best_m = c.m;
    }
  }
  return best_m;
}

struct CurveOptions {
  double beta_S = 0.5;
  double beta_f = 0.0;
  bool sampling_term = false;  // concentration form with B and p below
  ScaleObjective form = ScaleObjective::Expectation;  // used when sampling_term is off
  std::size_t B = 100;
  double p = 0.05;
  double C = 1.0;  // big-O and simplified forms only
};

struct CurvePoint {
  std::size_t m = 0;
  double bound = 0.0;
  bool vacuous = false;
};

/// Candidates m = 2..n for a unit gradient whose projected norm at m is the
/// square root of the normalized cumulative energy of the first m
/// directions, with all alphas one and delta = 1/m.
inline std::vector<ScaleCandidate> energy_family(const std::vector<double>& energy, double beta_f = 0.0) {
  const std::size_t n = energy.size();
  if (n < 2) throw PreconditionError("curves need n >= 2");
  double total = 0.0;
  for (double e : energy) {
    if (!(e >= 0.0)) throw PreconditionError("energies must be non-negative");
    total += e;
  }
  if (!(total > 0.0)) throw PreconditionError("energy profile is zero");
  std::vector<ScaleCandidate> out;
  double cumulative = energy[0];
  for (std::size_t m = 2; m <= n; ++m) {
    cumulative += energy[m - 1];
    ScaleCandidate c;
    c.m = m;
    c.proj_norm = std::min(1.0, std::sqrt(cumulative / total));
    c.beta_f = beta_f;
    c.delta = 1.0 / static_cast<double>(m);
    out.push_back(std::move(c));
  }
  return out;
}

/// Bound as a function of m over energy_family, theta = 0.
inline std::vector<CurvePoint> figure4_curves(const std::vector<double>& energy, const CurveOptions& opt = {}) {
  const auto family = energy_family(energy, opt.beta_f);
  BoundParams base = BoundParams::isotropic(2, energy.size());
  base.theta = 0.0;
  base.delta = 0.5;
  base.beta_S = opt.beta_S;
  base.grad_norm = 1.0;
  base.B = opt.B;
  base.p = opt.p;
  const ScaleObjective form = opt.sampling_term ? ScaleObjective::Concentration : opt.form;
  std::vector<CurvePoint> out;
  for (const auto& c : family) {
    const double v = scale_objective_value(c, base, form, opt.C);
    out.push_back({c.m, v, v < 0.0});
  }
  return out;
}

/// m of the highest point; the first one wins ties.
inline std::size_t curve_argmax(const std::vector<CurvePoint>& curve) {
  if (curve.empty()) throw PreconditionError("empty curve");
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].bound > curve[best].bound) best = i;
  return curve[best].m;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "m,bound,vacuous\n";
  for (const auto& c : curve)
    out += std::to_string(c.m) + "," + format_double(c.bound) + "," + (c.vacuous ? "1" : "0") + "\n";
  return out;
}

}  // namespace psba
