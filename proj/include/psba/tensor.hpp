#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psba/error.hpp"
#include "psba/rng.hpp"

namespace psba {

/// (channels, height, width) of an image-like tensor.
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  constexpr std::size_t size() const noexcept { return channels * height * width; }
  constexpr std::size_t plane_size() const noexcept { return height * width; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

/// Flat row-major (c, h, w) array of 64-bit reals.
class ImageTensor {
 public:
  ImageTensor() = default;

  explicit ImageTensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}

  ImageTensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeMismatch("tensor data has " + std::to_string(data_.size()) +
                          " entries, shape " + shape_.str() + " needs " +
                          std::to_string(shape_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[(c * shape_.height + h) * shape_.width + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[(c * shape_.height + h) * shape_.width + w];
  }

  std::span<double> channel(std::size_t c) noexcept {
    return std::span<double>(data_).subspan(c * shape_.plane_size(), shape_.plane_size());
  }
  std::span<const double> channel(std::size_t c) const noexcept {
    return std::span<const double>(data_).subspan(c * shape_.plane_size(), shape_.plane_size());
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Point of the sampling space R^m.
class LatentVector {
 public:
  LatentVector() = default;
  explicit LatentVector(std::vector<double> data) : data_(std::move(data)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  friend bool operator==(const LatentVector&, const LatentVector&) = default;

 private:
  std::vector<double> data_;
};

/// Orthonormal vectors spanning a subspace of R^n.
using Basis = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Vector primitives. Summation runs in index order so results are bit-stable.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeMismatch("dot of vectors with lengths " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()));
  }
  // Four partial sums break the add dependency chain.
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }
inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("axpy length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale_in_place(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

inline bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateVector("cosine similarity of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline double cosine_similarity(const ImageTensor& a, const ImageTensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("cosine similarity shape mismatch");
  return cosine_similarity(a.values(), b.values());
}

inline ImageTensor operator+(const ImageTensor& a, const ImageTensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("tensor sum shape mismatch");
  ImageTensor out = a;
  axpy(1.0, b.values(), out.values());
  return out;
}

inline ImageTensor operator-(const ImageTensor& a, const ImageTensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("tensor difference shape mismatch");
  ImageTensor out = a;
  axpy(-1.0, b.values(), out.values());
  return out;
}

inline ImageTensor operator*(double alpha, const ImageTensor& a) {
  ImageTensor out = a;
  scale_in_place(out.values(), alpha);
  return out;
}

/// Mean squared error (1/n) * ||a - b||^2.
inline double mse(const ImageTensor& a, const ImageTensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("mse of shapes " + a.shape().str() + " and " + b.shape().str());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double distance(const ImageTensor& a, const ImageTensor& b) {
  return std::sqrt(mse(a, b) * static_cast<double>(a.size()));
}

/// Uniform sample on S^{m-1}: i.i.d. standard normals, normalized.
inline LatentVector sample_unit_sphere(std::size_t m, SeededRng& rng) {
  if (m == 0) throw InvalidDimension("cannot sample the unit sphere of dimension 0");
  std::vector<double> v(m);
  double n2 = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    n2 = squared_norm(v);
  } while (!(n2 > 0.0));
  const double n = std::sqrt(n2);
  for (double& x : v) x /= n;
  return LatentVector(std::move(v));
}

/// Largest |<b_i, b_j> - [i == j]| over all pairs of the basis.
inline double orthonormality_defect(const Basis& basis) {
  double worst = 0.0;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    for (std::size_t j = i; j < basis.size(); ++j) {
      const double target = i == j ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(dot(basis[i], basis[j]) - target));
    }
  }
  return worst;
}

/// Orthogonal projection of v onto span(basis). The basis must be
/// orthonormal within 1e-10.
inline std::vector<double> project_onto_span(std::span<const double> v, const Basis& basis) {
  for (const auto& b : basis) {
    if (b.size() != v.size()) throw ShapeMismatch("basis vector length differs from v");
  }
  if (orthonormality_defect(basis) > 1e-10) {
    throw PreconditionError("project_onto_span requires an orthonormal basis");
  }
  std::vector<double> out(v.size(), 0.0);
  for (const auto& b : basis) axpy(dot(v, b), b, out);
  return out;
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Throws
/// DegenerateVector when a column is (numerically) dependent on earlier ones.
inline Basis orthonormalize(const std::vector<std::vector<double>>& columns, double tol = 1e-10) {
  Basis q;
  q.reserve(columns.size());
  for (const auto& col : columns) {
    std::vector<double> v = col;
    const double original = norm(v);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : q) axpy(-dot(v, b), b, v);
    }
    const double n = norm(v);
    if (!(n > tol * std::max(original, 1.0))) {
      throw DegenerateVector("columns are linearly dependent");
    }
    scale_in_place(v, 1.0 / n);
    q.push_back(std::move(v));
  }
  return q;
}

}  // namespace psba
