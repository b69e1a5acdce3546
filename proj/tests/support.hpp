#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "psba/psba.hpp"

namespace psba::support {

/// Two-class affine model S(x) = <d, x> + offset with a random unit d, and
/// a target x* on the negative side.
struct AffineCase {
  Classifier model;
  AttackSpec spec;
  ImageTensor direction;  // unit gradient of S
};

inline AffineCase affine_case(Shape shape, SeededRng& rng, double margin = 0.5) {
  std::vector<double> raw = zoo::normal_vector(shape.size(), rng);
  scale_in_place(raw, 1.0 / norm(raw));
  const ImageTensor d(shape, std::move(raw));
  ImageTensor target = zoo::random_image(shape, rng);
  // Pick the offset so S(x*) = -margin.
  const double offset = -margin - dot(d.values(), target.values());
  Classifier model = zoo::affine_from_direction(d, offset);
  AttackSpec spec{AttackMode::Untargeted, 0, target};
  return {std::move(model), std::move(spec), d};
}

/// Point on the decision boundary reached by exact projection (affine
/// models only): x - S(x) d / ||d||^2.
inline ImageTensor affine_boundary_point(const AffineCase& c, const ImageTensor& x) {
  const double s = difference(c.model, c.spec, x);
  const double dn2 = squared_norm(c.direction.values());
  return x + (-s / dn2) * c.direction;
}

/// Boundary point of any model: synthetic start, then a fine bisection
/// using the decision function directly.
inline ImageTensor boundary_point(const Classifier& model, const AttackSpec& spec, SeededRng& rng) {
  const ImageTensor start = synthetic_start(model, spec, rng);
  LocalOracle oracle([&](const ImageTensor& x) { return sign(model, spec, x); });
  return binary_search_boundary(oracle, start, spec.reference, 1e-12).point;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median absolute deviation.
inline double mad(const std::vector<double>& v) {
  const double m = median(v);
  std::vector<double> d;
  d.reserve(v.size());
  for (double x : v) d.push_back(std::abs(x - m));
  return median(d);
}

}  // namespace psba::support
