#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "psba/error.hpp"
#include "psba/tensor.hpp"

namespace psba {

/// A single real-valued channel, row-major.
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  Plane(std::size_t h, std::size_t w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w) throw ShapeMismatch("plane data does not match its size");
  }

  double& operator()(std::size_t r, std::size_t c) noexcept { return values[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return values[r * width + c]; }
};

/// Orthonormal DCT-II coefficients of a plane; DC term at (0, 0).
struct DctPlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> coefficients;

  double& operator()(std::size_t r, std::size_t c) noexcept { return coefficients[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return coefficients[r * width + c]; }
};

namespace detail {

// C = A (r x k) * B (k x c), all row-major.
inline std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::size_t r,
                                  std::size_t k, std::size_t c) {
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &b[p * c];
      double* orow = &out[i * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

// Transpose of a row-major (r x c) matrix.
inline std::vector<double> transpose(std::span<const double> a, std::size_t r, std::size_t c) {
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

}  // namespace detail

/// Orthonormal DCT-II matrix D (n x n): D[k][i] = c_k cos(pi (2i + 1) k / 2n),
/// c_0 = sqrt(1/n), c_k = sqrt(2/n). Cached per size.
inline std::shared_ptr<const std::vector<double>> dct_matrix(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const std::vector<double>>> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  auto d = std::make_shared<std::vector<double>>(n * n);
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ck = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
    for (std::size_t i = 0; i < n; ++i) {
      (*d)[k * n + i] =
          ck * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(k) / (2.0 * nn));
    }
  }
  cache.emplace(n, d);
  return d;
}

inline DctPlane dct2(const Plane& plane) {
  if (plane.height == 0 || plane.width == 0) throw InvalidDimension("dct2 of an empty plane");
  const auto dh = dct_matrix(plane.height);
  const auto dw = dct_matrix(plane.width);
  // Y = Dh X Dw^T
  auto tmp = detail::matmul(*dh, plane.values, plane.height, plane.height, plane.width);
  auto dwt = detail::transpose(*dw, plane.width, plane.width);
  return DctPlane{plane.height, plane.width, detail::matmul(tmp, dwt, plane.height, plane.width, plane.width)};
}

inline Plane idct2(const DctPlane& coeffs) {
  if (coeffs.height == 0 || coeffs.width == 0) throw InvalidDimension("idct2 of an empty plane");
  const auto dh = dct_matrix(coeffs.height);
  const auto dw = dct_matrix(coeffs.width);
  // X = Dh^T Y Dw
  auto dht = detail::transpose(*dh, coeffs.height, coeffs.height);
  auto tmp = detail::matmul(dht, coeffs.coefficients, coeffs.height, coeffs.height, coeffs.width);
  return Plane(coeffs.height, coeffs.width, detail::matmul(tmp, *dw, coeffs.height, coeffs.width, coeffs.width));
}

/// Keeps the upper-left k x k block of coefficients and zeroes the rest.
inline DctPlane lowpass_filter(const DctPlane& plane, std::size_t k) {
  if (k < 1 || k > std::min(plane.height, plane.width)) {
    throw PreconditionError("low-pass size " + std::to_string(k) + " outside [1, " +
                            std::to_string(std::min(plane.height, plane.width)) + "]");
  }
  DctPlane out{plane.height, plane.width, std::vector<double>(plane.coefficients.size(), 0.0)};
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c) out(r, c) = plane(r, c);
  return out;
}

inline Plane channel_plane(const ImageTensor& img, std::size_t c) {
  auto ch = img.channel(c);
  return Plane(img.shape().height, img.shape().width, std::vector<double>(ch.begin(), ch.end()));
}

inline void set_channel(ImageTensor& img, std::size_t c, const Plane& plane) {
  auto ch = img.channel(c);
  std::copy(plane.values.begin(), plane.values.end(), ch.begin());
}

/// 1-D bilinear interpolation weights (out x in), align-corners convention:
/// output index i samples input coordinate i * (in - 1) / (out - 1), so the
/// first and last samples coincide exactly.
inline std::vector<double> bilinear_weights(std::size_t in, std::size_t out) {
  if (in == 0 || out < in) throw PreconditionError("bilinear weights need 1 <= in <= out");
  std::vector<double> u(out * in, 0.0);
  for (std::size_t i = 0; i < out; ++i) {
    double pos = 0.0;
    if (out > 1 && in > 1) {
      pos = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    }
    auto j0 = static_cast<std::size_t>(std::floor(pos));
    j0 = std::min(j0, in - 1);
    const std::size_t j1 = std::min(j0 + 1, in - 1);
    const double frac = pos - static_cast<double>(j0);
    u[i * in + j0] += 1.0 - frac;
    u[i * in + j1] += frac;
  }
  return u;
}

namespace detail {

// Nonzero entries of one row of bilinear_weights, in column order.
struct Taps {
  std::size_t j0 = 0, j1 = 0;
  double w0 = 0.0, w1 = 0.0;
  bool single = false;
};

inline std::vector<Taps> bilinear_taps(std::size_t in, std::size_t out) {
  const auto u = bilinear_weights(in, out);
  std::vector<Taps> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    Taps& t = taps[i];
    std::size_t found = 0;
    for (std::size_t j = 0; j < in; ++j) {
      if (u[i * in + j] == 0.0) continue;
      (found == 0 ? t.j0 : t.j1) = j;
      (found == 0 ? t.w0 : t.w1) = u[i * in + j];
      ++found;
    }
    t.single = found < 2;
  }
  return taps;
}

}  // namespace detail

/// Bilinear (align-corners) upscaling of each channel to height x width.
/// Equivalent to U_h X U_w^T with the weights above; only the two nonzero
/// taps per row are visited.
inline ImageTensor bilinear_upscale(const ImageTensor& small, std::size_t height, std::size_t width) {
  const Shape& s = small.shape();
  if (s.height == 0 || s.width == 0) throw InvalidDimension("cannot upscale an empty image");
  if (height < s.height || width < s.width) {
    throw PreconditionError("bilinear_upscale cannot shrink; use avgpool_downscale");
  }
  const auto th = detail::bilinear_taps(s.height, height);
  const auto tw = detail::bilinear_taps(s.width, width);
  ImageTensor out(Shape{s.channels, height, width});
  std::vector<double> rows(height * s.width);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const auto in = small.channel(c);
    for (std::size_t i = 0; i < height; ++i) {
      const auto& t = th[i];
      for (std::size_t k = 0; k < s.width; ++k) {
        double v = t.w0 * in[t.j0 * s.width + k];
        if (!t.single) v += t.w1 * in[t.j1 * s.width + k];
        rows[i * s.width + k] = v;
      }
    }
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < height; ++i) {
      const double* r = rows.data() + i * s.width;
      for (std::size_t j = 0; j < width; ++j) {
        const auto& t = tw[j];
        double v = r[t.j0] * t.w0;
        if (!t.single) v += r[t.j1] * t.w1;
        dst[i * width + j] = v;
      }
    }
  }
  return out;
}

/// Average pooling over non-overlapping factor x factor blocks.
inline ImageTensor avgpool_downscale(const ImageTensor& img, std::size_t factor) {
  const Shape& s = img.shape();
  if (factor == 0 || s.height % factor != 0 || s.width % factor != 0) {
    throw PreconditionError("image " + s.str() + " is not divisible by factor " + std::to_string(factor));
  }
  const Shape os{s.channels, s.height / factor, s.width / factor};
  ImageTensor out(os);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t r = 0; r < os.height; ++r)
      for (std::size_t q = 0; q < os.width; ++q) {
        double acc = 0.0;
        for (std::size_t dr = 0; dr < factor; ++dr)
          for (std::size_t dq = 0; dq < factor; ++dq) acc += img.at(c, r * factor + dr, q * factor + dq);
        out.at(c, r, q) = acc * inv;
      }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaBasis {
  std::vector<std::vector<double>> components;  // k orthonormal vectors in R^n
  std::vector<double> explained_energy;         // non-increasing
  std::vector<double> mean;                     // sample mean used for centering

  std::size_t size() const noexcept { return components.size(); }
};

/// Top-k principal components of the mean-centred sample covariance.
/// Covariance eigendecomposition when n <= 4096, the sample Gram matrix
/// otherwise. Each component's largest-magnitude entry is made positive.
inline PcaBasis pca_fit(const std::vector<ImageTensor>& samples, std::size_t k) {
  if (samples.empty()) throw PreconditionError("pca_fit needs samples");
  const std::size_t count = samples.size();
  const std::size_t n = samples.front().size();
  if (k < 1 || k > n) throw PreconditionError("pca_fit needs 1 <= k <= n");
  if (count < k) throw PreconditionError("pca_fit needs at least k samples");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < count; ++i) {
    if (samples[i].shape() != samples.front().shape()) throw ShapeMismatch("pca samples differ in shape");
    for (std::size_t j = 0; j < n; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i][j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const double denom = count > 1 ? static_cast<double>(count - 1) : 1.0;

  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd vectors;  // columns in R^n
  if (n <= 4096) {
    const Eigen::MatrixXd cov = (x.transpose() * x) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    eigenvalues = solver.eigenvalues();
    vectors = solver.eigenvectors();
  } else {
    const Eigen::MatrixXd gram = (x * x.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    eigenvalues = solver.eigenvalues();
    vectors = x.transpose() * solver.eigenvectors();
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
      const double nc = vectors.col(c).norm();
      if (nc > 0.0) vectors.col(c) /= nc;
    }
  }

  const Eigen::Index total = eigenvalues.size();
  const double top = total > 0 ? std::max(eigenvalues(total - 1), 0.0) : 0.0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < total; ++i)
    if (top > 0.0 && eigenvalues(i) > 1e-10 * top) ++rank;
  if (count < 2) rank = 0;
  if (k > rank) throw RankDeficient(k, rank);

  PcaBasis basis;
  basis.mean.assign(mu.data(), mu.data() + n);
  for (std::size_t i = 0; i < k; ++i) {
    const Eigen::Index col = total - 1 - static_cast<Eigen::Index>(i);
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = vectors(static_cast<Eigen::Index>(j), col);
    const auto big = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*big < 0.0) scale_in_place(v, -1.0);
    scale_in_place(v, 1.0 / norm(v));
    basis.components.push_back(std::move(v));
    basis.explained_energy.push_back(eigenvalues(col));
  }
  return basis;
}

/// Sum over samples of the squared residual after projecting the centred
/// sample onto the basis.
inline double pca_reconstruction_error(const std::vector<ImageTensor>& samples, const PcaBasis& basis) {
  double total = 0.0;
  for (const auto& s : samples) {
    std::vector<double> centred(s.values().begin(), s.values().end());
    axpy(-1.0, basis.mean, centred);
    std::vector<double> resid = centred;
    for (const auto& c : basis.components) axpy(-dot(centred, c), c, resid);
    total += squared_norm(resid);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Frequency profile

/// JPEG zigzag traversal of an h x w grid as (row, col) pairs, low to high
/// frequency.
inline std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t h, std::size_t w) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  order.reserve(h * w);
  for (std::size_t d = 0; d + 1 < h + w; ++d) {
    const std::size_t rmin = d >= w ? d - w + 1 : 0;
    const std::size_t rmax = std::min(d, h - 1);
    if (d % 2 == 1) {
      for (std::size_t r = rmin; r <= rmax; ++r) order.emplace_back(r, d - r);
    } else {
      for (std::size_t r = rmax + 1; r-- > rmin;) order.emplace_back(r, d - r);
    }
  }
  return order;
}

/// Centred moving average; windows are truncated at the ends. window <= 1
/// leaves the series unchanged.
inline std::vector<double> moving_average(const std::vector<double>& series, std::size_t window) {
  if (window <= 1) return series;
  const std::size_t half = window / 2;
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(series.size() - 1, i + half);
    double acc = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) acc += series[j];
    out[i] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

/// Mean absolute DCT coefficient per channel in zigzag order, averaged over
/// unit-normalized gradients. Result is indexed [channel][frequency].
inline std::vector<std::vector<double>> spectrum_profile(const std::vector<ImageTensor>& gradients,
                                                         std::size_t smoothing_window = 1) {
  if (gradients.empty()) throw PreconditionError("spectrum_profile needs at least one gradient");
  const Shape shape = gradients.front().shape();
  const auto order = zigzag_order(shape.height, shape.width);
  std::vector<std::vector<double>> profile(shape.channels, std::vector<double>(order.size(), 0.0));
  for (const auto& g : gradients) {
    if (g.shape() != shape) throw ShapeMismatch("spectrum_profile gradients differ in shape");
    const double gn = norm(g.values());
    if (!(gn > 0.0)) continue;
    for (std::size_t c = 0; c < shape.channels; ++c) {
      Plane p = channel_plane(g, c);
      scale_in_place(p.values, 1.0 / gn);
      const DctPlane d = dct2(p);
      for (std::size_t i = 0; i < order.size(); ++i)
        profile[c][i] += std::abs(d(order[i].first, order[i].second));
    }
  }
  for (auto& series : profile) {
    scale_in_place(series, 1.0 / static_cast<double>(gradients.size()));
    series = moving_average(series, smoothing_window);
  }
  return profile;
}

/// Splits a series into `bins` contiguous groups and returns their means.
inline std::vector<double> bin_means(const std::vector<double>& series, std::size_t bins) {
  if (bins == 0 || bins > series.size()) throw PreconditionError("bin count out of range");
  std::vector<double> out(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * series.size() / bins;
    const std::size_t hi = (b + 1) * series.size() / bins;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += series[i];
    out[b] = acc / static_cast<double>(hi - lo);
  }
  return out;
}

}  // namespace psba
