#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "psba/error.hpp"
#include "psba/rng.hpp"
#include "psba/tensor.hpp"

namespace psba {

enum class ClassifierKind { Affine, TwoLayerTanh, Radial };

inline std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::Affine: return "affine";
    case ClassifierKind::TwoLayerTanh: return "two_layer_tanh";
    case ClassifierKind::Radial: return "radial";
  }
  return "unknown";
}

inline ClassifierKind classifier_kind_from_string(const std::string& s) {
  if (s == "affine") return ClassifierKind::Affine;
  if (s == "two_layer_tanh") return ClassifierKind::TwoLayerTanh;
  if (s == "radial") return ClassifierKind::Radial;
  throw ConfigError("unknown classifier kind '" + s + "'");
}

/// Smooth multi-class model G: R^n -> R^C with analytic logit gradients.
///
///  affine          G(x) = W x + b
///  two_layer_tanh  G(x) = V tanh(U x + a) + b
///  radial          G(x)_c = b_c - g_c ||x - mu_c||^2 / 2
///
/// All matrices are stored row-major. Instances are immutable after
/// construction and safe to share across threads.
class Classifier {
 public:
  static Classifier affine(Shape input, std::size_t classes, std::vector<double> weights, std::vector<double> bias) {
    Classifier m(ClassifierKind::Affine, input, classes);
    m.w1_ = std::move(weights);
    m.b2_ = std::move(bias);
    m.validate();
    return m;
  }

  static Classifier two_layer_tanh(Shape input, std::size_t classes, std::size_t hidden, std::vector<double> w1,
                                   std::vector<double> b1, std::vector<double> w2, std::vector<double> b2) {
    Classifier m(ClassifierKind::TwoLayerTanh, input, classes);
    m.hidden_ = hidden;
    m.w1_ = std::move(w1);
    m.b1_ = std::move(b1);
    m.w2_ = std::move(w2);
    m.b2_ = std::move(b2);
    m.validate();
    return m;
  }

  static Classifier radial(Shape input, std::size_t classes, std::vector<double> centers, std::vector<double> gains,
                           std::vector<double> bias) {
    Classifier m(ClassifierKind::Radial, input, classes);
    m.w1_ = std::move(centers);
    m.b1_ = std::move(gains);
    m.b2_ = std::move(bias);
    m.validate();
    return m;
  }

  ClassifierKind kind() const noexcept { return kind_; }
  const Shape& input_shape() const noexcept { return input_; }
  std::size_t input_dim() const noexcept { return input_.size(); }
  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t hidden() const noexcept { return hidden_; }

  /// Affine weights, tanh first layer, or radial centres.
  const std::vector<double>& first_layer() const noexcept { return w1_; }
  const std::vector<double>& second_layer() const noexcept { return w2_; }

  std::vector<double> logits(const ImageTensor& x) const {
    check_input(x);
    const std::size_t n = input_dim();
    std::vector<double> out(classes_, 0.0);
    switch (kind_) {
      case ClassifierKind::Affine:
        for (std::size_t c = 0; c < classes_; ++c)
          out[c] = dot(std::span<const double>(w1_).subspan(c * n, n), x.values()) + b2_[c];
        break;
      case ClassifierKind::TwoLayerTanh: {
        const auto h = hidden_activations(x);
        for (std::size_t c = 0; c < classes_; ++c)
          out[c] = dot(std::span<const double>(w2_).subspan(c * hidden_, hidden_), h) + b2_[c];
        break;
      }
      case ClassifierKind::Radial:
        for (std::size_t c = 0; c < classes_; ++c) {
          double d2 = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double d = x[i] - w1_[c * n + i];
            d2 += d * d;
          }
          out[c] = b2_[c] - 0.5 * b1_[c] * d2;
        }
        break;
    }
    return out;
  }

  std::size_t predict(const ImageTensor& x) const {
    const auto l = logits(x);
    return static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
  }

  /// Gradient of G(x)_a - G(x)_b with respect to x.
  std::vector<double> logit_difference_gradient(const ImageTensor& x, std::size_t a, std::size_t b) const {
    check_input(x);
    const std::size_t n = input_dim();
    std::vector<double> g(n, 0.0);
    switch (kind_) {
      case ClassifierKind::Affine:
        for (std::size_t i = 0; i < n; ++i) g[i] = w1_[a * n + i] - w1_[b * n + i];
        break;
      case ClassifierKind::TwoLayerTanh: {
        const auto h = hidden_activations(x);
        for (std::size_t j = 0; j < hidden_; ++j) {
          const double coef = (w2_[a * hidden_ + j] - w2_[b * hidden_ + j]) * (1.0 - h[j] * h[j]);
          if (coef != 0.0) axpy(coef, std::span<const double>(w1_).subspan(j * n, n), g);
        }
        break;
      }
      case ClassifierKind::Radial:
        for (std::size_t i = 0; i < n; ++i) {
          g[i] = -b1_[a] * (x[i] - w1_[a * n + i]) + b1_[b] * (x[i] - w1_[b * n + i]);
        }
        break;
    }
    return g;
  }

  /// Upper bound on the Lipschitz constant of grad(G_a - G_b) over all class
  /// pairs (the smoothness constant beta_S when C = 2). Uses the Frobenius
  /// norm as a bound on the spectral norm and max |d/dz sech^2 z| = 4/(3 sqrt 3).
  double smoothness_upper_bound() const {
    switch (kind_) {
      case ClassifierKind::Affine: return 0.0;
      case ClassifierKind::Radial: {
        double worst = 0.0;
        for (std::size_t a = 0; a < classes_; ++a)
          for (std::size_t b = 0; b < classes_; ++b)
            if (a != b) worst = std::max(worst, std::abs(b1_[a] - b1_[b]));
        return worst;
      }
      case ClassifierKind::TwoLayerTanh: {
        double frob2 = 0.0;
        for (double v : w1_) frob2 += v * v;
        double vmax = 0.0;
        for (std::size_t a = 0; a < classes_; ++a)
          for (std::size_t b = 0; b < classes_; ++b)
            for (std::size_t j = 0; j < hidden_; ++j)
              vmax = std::max(vmax, std::abs(w2_[a * hidden_ + j] - w2_[b * hidden_ + j]));
        return 4.0 / (3.0 * std::sqrt(3.0)) * vmax * frob2;
      }
    }
    return 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "psba-model/1";
    j["kind"] = to_string(kind_);
    j["input_shape"] = {input_.channels, input_.height, input_.width};
    j["num_classes"] = classes_;
    switch (kind_) {
      case ClassifierKind::Affine:
        j["weights"] = w1_;
        j["bias"] = b2_;
        break;
      case ClassifierKind::TwoLayerTanh:
        j["hidden"] = hidden_;
        j["w1"] = w1_;
        j["b1"] = b1_;
        j["w2"] = w2_;
        j["b2"] = b2_;
        break;
      case ClassifierKind::Radial:
        j["centers"] = w1_;
        j["gains"] = b1_;
        j["bias"] = b2_;
        break;
    }
    return j;
  }

  static Classifier from_json(const nlohmann::json& j) {
    try {
      const auto kind = classifier_kind_from_string(j.at("kind").get<std::string>());
      const auto dims = j.at("input_shape").get<std::vector<std::size_t>>();
      if (dims.size() != 3) throw ConfigError("input_shape must have three entries");
      const Shape shape{dims[0], dims[1], dims[2]};
      const auto classes = j.at("num_classes").get<std::size_t>();
      const auto vec = [&](const char* key) { return j.at(key).get<std::vector<double>>(); };
      switch (kind) {
        case ClassifierKind::Affine: return affine(shape, classes, vec("weights"), vec("bias"));
        case ClassifierKind::TwoLayerTanh:
          return two_layer_tanh(shape, classes, j.at("hidden").get<std::size_t>(), vec("w1"), vec("b1"), vec("w2"),
                                vec("b2"));
        case ClassifierKind::Radial: return radial(shape, classes, vec("centers"), vec("gains"), vec("bias"));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed model JSON: ") + e.what());
    } catch (const ShapeMismatch& e) {
      throw ConfigError(std::string("malformed model JSON: ") + e.what());
    }
    throw ConfigError("malformed model JSON");
  }

 private:
  Classifier(ClassifierKind kind, Shape input, std::size_t classes) : kind_(kind), input_(input), classes_(classes) {}

  std::vector<double> hidden_activations(const ImageTensor& x) const {
    const std::size_t n = input_dim();
    std::vector<double> h(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j)
      h[j] = std::tanh(dot(std::span<const double>(w1_).subspan(j * n, n), x.values()) + b1_[j]);
    return h;
  }

  void check_input(const ImageTensor& x) const {
    if (x.size() != input_dim()) {
      throw ShapeMismatch("input has " + std::to_string(x.size()) + " entries, model expects " +
                          std::to_string(input_dim()));
    }
  }

  void validate() const {
    const std::size_t n = input_dim();
    const auto expect = [](const std::vector<double>& v, std::size_t len, const char* what) {
      if (v.size() != len) {
        throw ShapeMismatch(std::string(what) + " has " + std::to_string(v.size()) + " entries, expected " +
                            std::to_string(len));
      }
      if (!all_finite(v)) throw ShapeMismatch(std::string(what) + " contains non-finite values");
    };
    if (n == 0 || classes_ < 2) throw ShapeMismatch("model needs n >= 1 and at least two classes");
    switch (kind_) {
      case ClassifierKind::Affine:
        expect(w1_, classes_ * n, "weights");
        expect(b2_, classes_, "bias");
        break;
      case ClassifierKind::TwoLayerTanh:
        if (hidden_ == 0) throw ShapeMismatch("hidden width must be positive");
        expect(w1_, hidden_ * n, "w1");
        expect(b1_, hidden_, "b1");
        expect(w2_, classes_ * hidden_, "w2");
        expect(b2_, classes_, "b2");
        break;
      case ClassifierKind::Radial:
        expect(w1_, classes_ * n, "centers");
        expect(b1_, classes_, "gains");
        expect(b2_, classes_, "bias");
        break;
    }
  }

  ClassifierKind kind_;
  Shape input_;
  std::size_t classes_;
  std::size_t hidden_ = 0;
  std::vector<double> w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------
// Difference and sign functions

enum class AttackMode { Untargeted, Targeted };

/// Untargeted: leave the original class y0. Targeted: reach class y'.
struct AttackSpec {
  AttackMode mode = AttackMode::Untargeted;
  std::size_t label = 0;  // y0 for untargeted, y' for targeted
  ImageTensor reference;  // x*

  static AttackSpec untargeted(const Classifier& model, ImageTensor reference) {
    AttackSpec s{AttackMode::Untargeted, model.predict(reference), std::move(reference)};
    return s;
  }

  static AttackSpec targeted(std::size_t target_label, ImageTensor reference) {
    return AttackSpec{AttackMode::Targeted, target_label, std::move(reference)};
  }

  nlohmann::json to_json() const {
    return {{"mode", mode == AttackMode::Untargeted ? "untargeted" : "targeted"}, {"label", label}};
  }
};

namespace detail {

struct ClassPair {
  std::size_t attacker;  // class whose margin the attacker wants positive
  std::size_t defender;
  bool tie = false;
};

// Best class other than `excluded`; lowest index wins ties.
inline std::pair<std::size_t, bool> best_other(const std::vector<double>& logits, std::size_t excluded) {
  std::size_t best = excluded == 0 ? 1 : 0;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (c != excluded && logits[c] > logits[best]) best = c;
  bool tie = false;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (c != excluded && c != best && logits[c] == logits[best]) tie = true;
  return {best, tie};
}

inline ClassPair active_pair(const Classifier& model, const AttackSpec& spec, const std::vector<double>& logits) {
  if (spec.label >= model.num_classes()) throw PreconditionError("attack label outside the model's classes");
  const auto [other, tie] = best_other(logits, spec.label);
  if (spec.mode == AttackMode::Untargeted) return {other, spec.label, tie};
  return {spec.label, other, tie};
}

}  // namespace detail

/// S(x): untargeted max_{y != y0} G_y - G_y0; targeted G_y' - max_{y != y'} G_y.
inline double difference(const Classifier& model, const AttackSpec& spec, const ImageTensor& x) {
  const auto l = model.logits(x);
  const auto pair = detail::active_pair(model, spec, l);
  return l[pair.attacker] - l[pair.defender];
}

/// phi(x) = +1 iff S(x) > 0, else -1.
inline int sign(const Classifier& model, const AttackSpec& spec, const ImageTensor& x) {
  return difference(model, spec, x) > 0.0 ? 1 : -1;
}

struct GradientResult {
  ImageTensor gradient;
  bool tie = false;  // several runner-up classes: a Clarke element was chosen
  std::size_t runner_up = 0;
};

/// Whitebox gradient of S, for verification only. On runner-up ties the
/// lowest class index is used and the result is flagged.
inline GradientResult true_gradient(const Classifier& model, const AttackSpec& spec, const ImageTensor& x) {
  const auto l = model.logits(x);
  const auto pair = detail::active_pair(model, spec, l);
  GradientResult r;
  r.gradient = ImageTensor(x.shape(), model.logit_difference_gradient(x, pair.attacker, pair.defender));
  r.tie = pair.tie;
  r.runner_up = spec.mode == AttackMode::Untargeted ? pair.attacker : pair.defender;
  return r;
}

}  // namespace psba
