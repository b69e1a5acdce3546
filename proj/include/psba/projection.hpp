#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "psba/error.hpp"
#include "psba/tensor.hpp"
#include "psba/transforms.hpp"

namespace psba {

enum class ProjectionKind { Identity, Spatial, FreqLowPass, SpectrumTopK, Linear };

inline std::string to_string(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::Identity: return "identity";
    case ProjectionKind::Spatial: return "spatial";
    case ProjectionKind::FreqLowPass: return "freq_lowpass";
    case ProjectionKind::SpectrumTopK: return "spectrum_topk";
    case ProjectionKind::Linear: return "linear";
  }
  return "unknown";
}

/// Linear map f: R^m -> R^n from the sampling space to image space. Its
/// image V is the projection subspace.
///
///  identity       m = C*H*W, reshape
///  spatial(s)     m = C*s*s, per-channel bilinear upscaling (align corners)
///  freq_lowpass   m = C*k*k, latent fills the upper-left k x k DCT block
///  spectrum_topk  m = k, sum of PCA components weighted by the latent
///  linear         m = #columns, arbitrary full-rank column matrix
///
/// apply() is linear; normalization happens in perturbation(). Instances are
/// immutable and cheap to copy.
class Projection {
 public:
  static Projection identity(Shape shape) {
    auto s = std::make_shared<State>(ProjectionKind::Identity, shape);
    s->latent_dim = shape.size();
    s->scale = shape.height;
    return Projection(std::move(s));
  }

  static Projection spatial(Shape shape, std::size_t side) {
    if (side < 1 || side > shape.height || side > shape.width) {
      throw PreconditionError("spatial side " + std::to_string(side) + " does not fit output " + shape.str());
    }
    auto s = std::make_shared<State>(ProjectionKind::Spatial, shape);
    s->latent_dim = shape.channels * side * side;
    s->scale = side;
    s->uh = bilinear_weights(side, shape.height);
    s->uw = bilinear_weights(side, shape.width);
    s->qh = orthonormal_factor(s->uh, shape.height, side);
    s->qw = orthonormal_factor(s->uw, shape.width, side);
    return Projection(std::move(s));
  }

  static Projection freq_lowpass(Shape shape, std::size_t k) {
    if (k < 1 || k > std::min(shape.height, shape.width)) {
      throw PreconditionError("low-pass size " + std::to_string(k) + " does not fit output " + shape.str());
    }
    auto s = std::make_shared<State>(ProjectionKind::FreqLowPass, shape);
    s->latent_dim = shape.channels * k * k;
    s->scale = k;
    s->dh = dct_matrix(shape.height);
    s->dw = dct_matrix(shape.width);
    return Projection(std::move(s));
  }

  static Projection spectrum_topk(const PcaBasis& basis, Shape shape) {
    if (basis.components.empty()) throw PreconditionError("spectrum_topk needs at least one component");
    for (const auto& c : basis.components)
      if (c.size() != shape.size()) throw ShapeMismatch("PCA component length differs from output shape");
    auto s = std::make_shared<State>(ProjectionKind::SpectrumTopK, shape);
    s->latent_dim = basis.components.size();
    s->scale = s->latent_dim;
    s->columns = basis.components;
    s->orthonormal = orthonormalize(basis.components);
    return Projection(std::move(s));
  }

  /// General full-rank linear map given by its m columns.
  static Projection linear(std::vector<std::vector<double>> columns, Shape shape) {
    if (columns.empty()) throw PreconditionError("linear projection needs at least one column");
    for (const auto& c : columns)
      if (c.size() != shape.size()) throw ShapeMismatch("projection column length differs from output shape");
    auto s = std::make_shared<State>(ProjectionKind::Linear, shape);
    s->latent_dim = columns.size();
    s->scale = s->latent_dim;
    s->orthonormal = orthonormalize(columns);
    s->columns = std::move(columns);
    return Projection(std::move(s));
  }

  ProjectionKind kind() const noexcept { return state_->kind; }
  std::size_t latent_dim() const noexcept { return state_->latent_dim; }
  const Shape& output_shape() const noexcept { return state_->shape; }
  /// Side for spatial / freq_lowpass, latent dimension otherwise.
  std::size_t scale() const noexcept { return state_->scale; }

  std::string describe() const {
    const auto& s = *state_;
    switch (s.kind) {
      case ProjectionKind::Spatial: return "spatial(" + std::to_string(s.scale) + ")";
      case ProjectionKind::FreqLowPass: return "freq_lowpass(" + std::to_string(s.scale) + ")";
      case ProjectionKind::Identity: return "identity";
      default: return to_string(s.kind) + "(" + std::to_string(s.latent_dim) + ")";
    }
  }

  ImageTensor apply(const LatentVector& u) const {
    const auto& s = *state_;
    if (u.dim() != s.latent_dim) {
      throw ShapeMismatch("latent vector has dimension " + std::to_string(u.dim()) + ", projection expects " +
                          std::to_string(s.latent_dim));
    }
    const Shape& shape = s.shape;
    const std::size_t h = shape.height;
    const std::size_t w = shape.width;
    switch (s.kind) {
      case ProjectionKind::Identity:
        return ImageTensor(shape, std::vector<double>(u.values().begin(), u.values().end()));
      case ProjectionKind::Spatial: {
        const std::size_t k = s.scale;
        const ImageTensor grid(Shape{shape.channels, k, k}, std::vector<double>(u.values().begin(), u.values().end()));
        return bilinear_upscale(grid, h, w);
      }
      case ProjectionKind::FreqLowPass: {
        ImageTensor out(shape);
        const std::size_t k = s.scale;
        // X = Dh[:k]^T K Dw[:k]
        const auto dht = detail::transpose(std::span<const double>(*s.dh).first(k * h), k, h);
        const auto dwk = std::span<const double>(*s.dw).first(k * w);
        for (std::size_t c = 0; c < shape.channels; ++c) {
          auto block = u.values().subspan(c * k * k, k * k);
          const auto tmp = detail::matmul(dht, block, h, k, k);
          const auto plane = detail::matmul(tmp, dwk, h, k, w);
          std::copy(plane.begin(), plane.end(), out.channel(c).begin());
        }
        return out;
      }
      case ProjectionKind::SpectrumTopK:
      case ProjectionKind::Linear: {
        ImageTensor out(shape);
        for (std::size_t i = 0; i < s.latent_dim; ++i) axpy(u[i], s.columns[i], out.values());
        return out;
      }
    }
    return ImageTensor(shape);
  }

  /// Orthogonal projection of v onto V.
  ImageTensor project(const ImageTensor& v) const {
    const auto& s = *state_;
    if (v.shape() != s.shape) throw ShapeMismatch("project: shape mismatch");
    const Shape& shape = s.shape;
    const std::size_t h = shape.height;
    const std::size_t w = shape.width;
    switch (s.kind) {
      case ProjectionKind::Identity: return v;
      case ProjectionKind::Spatial: {
        ImageTensor out(shape);
        const std::size_t k = s.scale;
        const auto qht = detail::transpose(s.qh, h, k);
        const auto qwt = detail::transpose(s.qw, w, k);
        for (std::size_t c = 0; c < shape.channels; ++c) {
          // T = Qh^T V Qw, result = Qh T Qw^T
          const auto a = detail::matmul(qht, v.channel(c), k, h, w);
          const auto t = detail::matmul(a, s.qw, k, w, k);
          const auto b = detail::matmul(s.qh, t, h, k, k);
          const auto plane = detail::matmul(b, qwt, h, k, w);
          std::copy(plane.begin(), plane.end(), out.channel(c).begin());
        }
        return out;
      }
      case ProjectionKind::FreqLowPass: {
        ImageTensor out(shape);
        for (std::size_t c = 0; c < shape.channels; ++c) {
          set_channel(out, c, idct2(lowpass_filter(dct2(channel_plane(v, c)), s.scale)));
        }
        return out;
      }
      case ProjectionKind::SpectrumTopK:
      case ProjectionKind::Linear: {
        ImageTensor out(shape);
        for (const auto& q : s.orthonormal) axpy(dot(v.values(), q), q, out.values());
        return out;
      }
    }
    return v;
  }

  /// Explicit orthonormal basis of V (m vectors of length n). Materializes
  /// m * n doubles; intended for desk-scale checks.
  Basis subspace_basis() const {
    const auto& s = *state_;
    const Shape& shape = s.shape;
    const std::size_t h = shape.height;
    const std::size_t w = shape.width;
    const std::size_t plane = h * w;
    Basis basis;
    switch (s.kind) {
      case ProjectionKind::Identity:
        for (std::size_t i = 0; i < shape.size(); ++i) {
          std::vector<double> e(shape.size(), 0.0);
          e[i] = 1.0;
          basis.push_back(std::move(e));
        }
        break;
      case ProjectionKind::Spatial:
      case ProjectionKind::FreqLowPass: {
        const std::size_t k = s.scale;
        for (std::size_t c = 0; c < shape.channels; ++c)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              std::vector<double> e(shape.size(), 0.0);
              for (std::size_t r = 0; r < h; ++r)
                for (std::size_t q = 0; q < w; ++q) {
                  const double a = s.kind == ProjectionKind::Spatial ? s.qh[r * k + i] : (*s.dh)[i * h + r];
                  const double b = s.kind == ProjectionKind::Spatial ? s.qw[q * k + j] : (*s.dw)[j * w + q];
                  e[c * plane + r * w + q] = a * b;
                }
              basis.push_back(std::move(e));
            }
        break;
      }
      case ProjectionKind::SpectrumTopK:
      case ProjectionKind::Linear: basis = s.orthonormal; break;
    }
    return basis;
  }

  nlohmann::json to_json() const {
    const auto& s = *state_;
    nlohmann::json j;
    j["kind"] = to_string(s.kind);
    j["output_shape"] = {s.shape.channels, s.shape.height, s.shape.width};
    if (s.kind == ProjectionKind::Spatial) j["side"] = s.scale;
    if (s.kind == ProjectionKind::FreqLowPass) j["k"] = s.scale;
    if (s.kind == ProjectionKind::SpectrumTopK || s.kind == ProjectionKind::Linear) j["columns"] = s.columns;
    return j;
  }

  /// Parses a descriptor. `default_shape` is used when the descriptor has no
  /// output_shape.
  static Projection from_json(const nlohmann::json& j, std::optional<Shape> default_shape = std::nullopt) {
    try {
      Shape shape;
      if (j.contains("output_shape")) {
        const auto d = j.at("output_shape").get<std::vector<std::size_t>>();
        if (d.size() != 3) throw ConfigError("output_shape must have three entries");
        shape = Shape{d[0], d[1], d[2]};
      } else if (default_shape) {
        shape = *default_shape;
      } else {
        throw ConfigError("projection descriptor needs output_shape");
      }
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "identity") return identity(shape);
      if (kind == "spatial") return spatial(shape, j.at("side").get<std::size_t>());
      if (kind == "freq_lowpass") return freq_lowpass(shape, j.at("k").get<std::size_t>());
      if (kind == "spectrum_topk") {
        PcaBasis b;
        b.components = j.at("columns").get<std::vector<std::vector<double>>>();
        return spectrum_topk(b, shape);
      }
      if (kind == "linear") return linear(j.at("columns").get<std::vector<std::vector<double>>>(), shape);
      throw ConfigError("unknown projection kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed projection descriptor: ") + e.what());
    }
  }

 private:
  struct State {
    State(ProjectionKind k, Shape s) : kind(k), shape(s) {}
    ProjectionKind kind;
    Shape shape;
    std::size_t latent_dim = 0;
    std::size_t scale = 0;
    // spatial: interpolation weights (out x side) and orthonormal factors
    std::vector<double> uh, uw, qh, qw;
    // freq_lowpass
    std::shared_ptr<const std::vector<double>> dh, dw;
    // spectrum_topk / linear
    std::vector<std::vector<double>> columns;
    Basis orthonormal;
  };

  explicit Projection(std::shared_ptr<const State> s) : state_(std::move(s)) {}

  // Orthonormalizes the columns of a row-major (rows x cols) matrix; returns
  // the result in the same layout.
  static std::vector<double> orthonormal_factor(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
    std::vector<std::vector<double>> columns(cols, std::vector<double>(rows));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) columns[c][r] = m[r * cols + c];
    const Basis q = orthonormalize(columns);
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = q[c][r];
    return out;
  }

  std::shared_ptr<const State> state_;
};

/// delta * f(u) / ||f(u)||.
inline ImageTensor perturbation(const Projection& p, const LatentVector& u, double delta) {
  ImageTensor f = p.apply(u);
  const double n = norm(f.values());
  if (!(n > 0.0)) throw DegenerateVector("projection of the latent sample is zero; resample");
  scale_in_place(f.values(), delta / n);
  return f;
}

/// ||proj_V g|| / ||g||, the best cosine any vector in V can reach with g.
inline double projected_gradient_fraction(const Projection& p, const ImageTensor& g) {
  const double gn = norm(g.values());
  if (!(gn > 0.0)) throw DegenerateVector("projected gradient fraction of a zero gradient");
  return std::clamp(norm(p.project(g).values()) / gn, 0.0, 1.0);
}

/// Largest deviation from 1 of ||proj_outer b|| over the basis vectors b of
/// `inner`. Zero (up to rounding) iff V_inner is contained in V_outer.
inline double nesting_defect(const Projection& inner, const Projection& outer) {
  double worst = 0.0;
  for (const auto& b : inner.subspace_basis()) {
    const ImageTensor v(inner.output_shape(), b);
    worst = std::max(worst, std::abs(1.0 - norm(outer.project(v).values())));
  }
  return worst;
}

/// Ordered projections with strictly increasing latent dimension and a
/// common output shape.
class ScaleSchedule {
 public:
  explicit ScaleSchedule(std::vector<Projection> scales) : scales_(std::move(scales)) {
    if (scales_.empty()) throw PreconditionError("scale schedule is empty");
    for (std::size_t i = 1; i < scales_.size(); ++i) {
      if (scales_[i].output_shape() != scales_[0].output_shape()) {
        throw PreconditionError("scale schedule mixes output shapes");
      }
      if (scales_[i].latent_dim() <= scales_[i - 1].latent_dim()) {
        throw PreconditionError("scale schedule must have strictly increasing latent dimension");
      }
    }
  }

  static ScaleSchedule spatial(Shape shape, const std::vector<std::size_t>& sides) {
    std::vector<Projection> p;
    for (auto s : sides) p.push_back(Projection::spatial(shape, s));
    return ScaleSchedule(std::move(p));
  }

  static ScaleSchedule freq_lowpass(Shape shape, const std::vector<std::size_t>& ks) {
    std::vector<Projection> p;
    for (auto k : ks) p.push_back(Projection::freq_lowpass(shape, k));
    return ScaleSchedule(std::move(p));
  }

  /// Sides 2, 3, 5, 9, 17, ... (2^j + 1). With align-corners interpolation
  /// V_s is contained in V_s' exactly when (s - 1) divides (s' - 1), so these
  /// sides give a nested chain.
  static std::vector<std::size_t> dyadic_sides(Shape shape, std::size_t levels) {
    std::vector<std::size_t> sides;
    const std::size_t limit = std::min(shape.height, shape.width);
    for (std::size_t s = 2; s <= limit && sides.size() < levels; s = 2 * s - 1) sides.push_back(s);
    return sides;
  }

  std::size_t size() const noexcept { return scales_.size(); }
  const Projection& operator[](std::size_t i) const { return scales_.at(i); }
  const std::vector<Projection>& scales() const noexcept { return scales_; }

 private:
  std::vector<Projection> scales_;
};

}  // namespace psba
