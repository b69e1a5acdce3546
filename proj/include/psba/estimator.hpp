#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>

#include "psba/classifier.hpp"
#include "psba/error.hpp"
#include "psba/oracle.hpp"
#include "psba/projection.hpp"
#include "psba/rng.hpp"
#include "psba/tensor.hpp"

namespace psba {

struct EstimateReport {
  ImageTensor estimate;
  std::size_t samples = 0;  // B
  double delta = 0.0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::uint64_t queries_used = 0;
};

namespace detail {

// Sample b is drawn from its own stream derived from `base`, so the b-th
// perturbation does not depend on evaluation order.
inline ImageTensor sample_perturbation(const Projection& p, std::uint64_t base, std::size_t b, double delta) {
  SeededRng rng(derive_seed(base, b));
  for (;;) {
    const LatentVector u = sample_unit_sphere(p.latent_dim(), rng);
    try {
      return perturbation(p, u, delta);
    } catch (const DegenerateVector&) {
      // f(u) = 0 only for u in the kernel; draw again from the same stream
    }
  }
}

struct IdentityTransform {
  void operator()(ImageTensor&) const noexcept {}
};

// Boundary gradient estimate with mean-sign balancing. `transform` may
// rewrite each perturbation in place before it is queried and weighted.
template <class Transform>
EstimateReport estimate_with(MeteredOracle& oracle, const ImageTensor& x_t, const Projection& p, double delta,
                             std::size_t samples, SeededRng& rng, Transform&& transform) {
  if (samples < 1) throw PreconditionError("estimator needs B >= 1");
  if (!(delta > 0.0)) throw PreconditionError("estimator needs delta > 0");
  if (x_t.shape() != p.output_shape()) throw ShapeMismatch("x_t shape differs from projection output");

  const std::uint64_t base = rng.next_u64();
  const std::size_t n = x_t.size();
  std::vector<double> signed_sum(n, 0.0);
  std::vector<double> plain_sum(n, 0.0);
  EstimateReport report;
  report.samples = samples;
  report.delta = delta;
  int first_sign = 0;

  for (std::size_t b = 0; b < samples; ++b) {
    ImageTensor q = sample_perturbation(p, base, b, delta);
    transform(q);
    int phi = 0;
    try {
      phi = oracle.query(x_t + q);
    } catch (const BudgetExhausted& e) {
      throw PartialEstimate(PartialEstimate::Cause::Budget, b, e.what());
    } catch (const TransportError& e) {
      throw PartialEstimate(PartialEstimate::Cause::Transport, b, e.what());
    }
    if (b == 0) first_sign = phi;
    (phi > 0 ? report.positive : report.negative) += 1;
    axpy(static_cast<double>(phi), q.values(), signed_sum);
    axpy(1.0, q.values(), plain_sum);
  }
  report.queries_used = samples;

  const double inv = 1.0 / static_cast<double>(samples);
  std::vector<double> est(n);
  if (report.positive == samples || report.negative == samples) {
    for (std::size_t i = 0; i < n; ++i) est[i] = first_sign * plain_sum[i] * inv;
  } else {
    const double mean_sign =
        (static_cast<double>(report.positive) - static_cast<double>(report.negative)) * inv;
    for (std::size_t i = 0; i < n; ++i) est[i] = (signed_sum[i] - mean_sign * plain_sum[i]) * inv;
  }
  report.estimate = ImageTensor(x_t.shape(), std::move(est));
  return report;
}

}  // namespace detail

/// Projective boundary gradient estimate at x_t from B label-only queries:
/// q_b = delta * f(u_b) / ||f(u_b)|| with u_b uniform on S^{m-1}, then
/// (1/B) sum (phi_b - mean phi) q_b, or phi_1 * mean(q_b) when every sign
/// agrees. Consumes exactly B queries; on budget or transport failure throws
/// PartialEstimate carrying the number of samples consumed.
inline EstimateReport estimate_gradient(MeteredOracle& oracle, const ImageTensor& x_t, const Projection& p,
                                        double delta, std::size_t samples, SeededRng& rng) {
  return detail::estimate_with(oracle, x_t, p, delta, samples, rng, detail::IdentityTransform{});
}

/// Same estimator with every perturbation reweighted as
/// <q, g> g + k (q - <q, g> g) for the unit gradient g, which scales the
/// projection's sensitivity on directions orthogonal to g by k. k = 1 is
/// exactly estimate_gradient.
inline EstimateReport adjusted_estimate(MeteredOracle& oracle, const ImageTensor& x_t, const Projection& p,
                                        const ImageTensor& gradient, double delta, std::size_t samples, double k,
                                        SeededRng& rng) {
  if (!(k >= 0.0 && k < 2.0)) throw PreconditionError("orthogonal weight k must lie in [0, 2)");
  if (k == 1.0) return estimate_gradient(oracle, x_t, p, delta, samples, rng);
  const double gn = norm(gradient.values());
  if (!(gn > 0.0)) throw DegenerateVector("adjusted estimate needs a nonzero true gradient");
  const ImageTensor unit = (1.0 / gn) * gradient;
  return detail::estimate_with(oracle, x_t, p, delta, samples, rng, [&](ImageTensor& q) {
    const double along = dot(q.values(), unit.values());
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double parallel = along * unit[i];
      q[i] = parallel + k * (q[i] - parallel);
    }
  });
}

/// Whitebox convenience: queries a fresh in-process oracle for (model, spec)
/// and uses the model's true gradient at x_t.
inline EstimateReport adjusted_estimate(const Classifier& model, const AttackSpec& spec, const ImageTensor& x_t,
                                        const Projection& p, double delta, std::size_t samples, double k,
                                        SeededRng& rng) {
  LocalOracle oracle([&](const ImageTensor& x) { return sign(model, spec, x); });
  const auto g = true_gradient(model, spec, x_t).gradient;
  return adjusted_estimate(oracle, x_t, p, g, delta, samples, k, rng);
}

struct SensitivityReport {
  double alpha1_sq = 0.0;  // (1/B) sum cos^2 <q_b, proj_V grad>
  double mean_orth = 0.0;  // (1/(B (m-1))) sum (1 - cos^2)
  bool single_direction = false;  // m = 1: no orthogonal directions, mean_orth reported as 0
  std::size_t samples = 0;
};

/// Empirical sensitivity of a projection along the projected true gradient
/// versus the mean over orthogonal directions.
inline SensitivityReport estimate_sensitivity(const Projection& p, const ImageTensor& gradient, double delta,
                                              std::size_t samples, SeededRng& rng) {
  if (samples < 1) throw PreconditionError("sensitivity needs B >= 1");
  const ImageTensor gv = p.project(gradient);
  const double gn = norm(gv.values());
  if (!(gn > 0.0)) throw DegenerateVector("projected true gradient is zero");
  const std::uint64_t base = rng.next_u64();
  double acc = 0.0;
  for (std::size_t b = 0; b < samples; ++b) {
    const ImageTensor q = detail::sample_perturbation(p, base, b, delta);
    const double c = dot(q.values(), gv.values()) / (norm(q.values()) * gn);
    acc += c * c;
  }
  SensitivityReport r;
  r.samples = samples;
  r.alpha1_sq = acc / static_cast<double>(samples);
  const std::size_t m = p.latent_dim();
  if (m == 1) {
    r.single_direction = true;
    r.mean_orth = 0.0;
  } else {
    r.mean_orth = (static_cast<double>(samples) - acc) / (static_cast<double>(samples) * static_cast<double>(m - 1));
  }
  return r;
}

inline SensitivityReport estimate_sensitivity(const Projection& p, const Classifier& model, const AttackSpec& spec,
                                              const ImageTensor& x_t, double delta, std::size_t samples,
                                              SeededRng& rng) {
  return estimate_sensitivity(p, true_gradient(model, spec, x_t).gradient, delta, samples, rng);
}

}  // namespace psba
