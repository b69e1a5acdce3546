#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "psba/classifier.hpp"
#include "psba/error.hpp"
#include "psba/projection.hpp"
#include "psba/rng.hpp"
#include "psba/tensor.hpp"
#include "psba/transforms.hpp"

// Small synthetic classifiers used by tests, examples and the CLI.

namespace psba::zoo {

inline std::vector<double> normal_vector(std::size_t n, SeededRng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline Classifier random_affine(Shape shape, std::size_t classes, SeededRng& rng) {
  const std::size_t n = shape.size();
  auto w = normal_vector(classes * n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  return Classifier::affine(shape, classes, std::move(w), std::vector<double>(classes, 0.0));
}

inline Classifier random_two_layer_tanh(Shape shape, std::size_t classes, std::size_t hidden, SeededRng& rng) {
  const std::size_t n = shape.size();
  auto w1 = normal_vector(hidden * n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  auto b1 = normal_vector(hidden, rng, 0.1);
  auto w2 = normal_vector(classes * hidden, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return Classifier::two_layer_tanh(shape, classes, hidden, std::move(w1), std::move(b1), std::move(w2),
                                    std::vector<double>(classes, 0.0));
}

inline Classifier random_radial(Shape shape, std::size_t classes, SeededRng& rng) {
  const std::size_t n = shape.size();
  std::vector<double> centers(classes * n);
  for (auto& c : centers) c = rng.uniform();
  std::vector<double> gains(classes);
  for (auto& g : gains) g = rng.uniform(0.5, 1.5);
  return Classifier::radial(shape, classes, std::move(centers), std::move(gains), std::vector<double>(classes, 0.0));
}

/// Two-class affine model with S(x) = <direction, x> + offset when attacked
/// untargeted from class 0.
inline Classifier affine_from_direction(const ImageTensor& direction, double offset) {
  const std::size_t n = direction.size();
  std::vector<double> w(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = -0.5 * direction[i];
    w[n + i] = 0.5 * direction[i];
  }
  return Classifier::affine(direction.shape(), 2, std::move(w), {-0.5 * offset, 0.5 * offset});
}

/// Unit vector mixing a smooth component (a random side x side image
/// upscaled bilinearly) with weight sqrt(1 - eps) and white noise orthogonal
/// to that spatial subspace with weight sqrt(eps).
inline ImageTensor low_frequency_direction(Shape shape, std::size_t side, double eps, SeededRng& rng) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw PreconditionError("high-frequency share must lie in [0, 1]");
  const Projection p = Projection::spatial(shape, side);
  ImageTensor low(Shape{shape.channels, side, side}, normal_vector(shape.channels * side * side, rng));
  ImageTensor up = bilinear_upscale(low, shape.height, shape.width);
  const double ln = norm(up.values());
  if (!(ln > 0.0)) throw DegenerateVector("smooth component vanished");
  ImageTensor noise(shape, normal_vector(shape.size(), rng));
  ImageTensor hf = noise - p.project(noise);
  const double hn = norm(hf.values());
  ImageTensor out = (std::sqrt(1.0 - eps) / ln) * up;
  if (hn > 0.0) out = out + (std::sqrt(eps) / hn) * hf;
  const double on = norm(out.values());
  return (1.0 / on) * out;
}

/// Two-class affine model whose gradient is a low-frequency direction.
inline Classifier lowfreq_affine(Shape shape, std::size_t side, double eps, SeededRng& rng, double offset = 0.0) {
  return affine_from_direction(low_frequency_direction(shape, side, eps, rng), offset);
}

/// Tanh network whose hidden units read low-frequency directions, centred
/// on the mid-grey image 0.5 * 1.
inline Classifier lowfreq_tanh(Shape shape, std::size_t classes, std::size_t hidden, std::size_t side, double eps,
                               SeededRng& rng, double row_scale = 1.0) {
  const std::size_t n = shape.size();
  std::vector<double> w1(hidden * n);
  std::vector<double> b1(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    const ImageTensor row = low_frequency_direction(shape, side, eps, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w1[j * n + i] = row_scale * row[i];
      s += row_scale * row[i];
    }
    b1[j] = -0.5 * s;
  }
  auto w2 = normal_vector(classes * hidden, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return Classifier::two_layer_tanh(shape, classes, hidden, std::move(w1), std::move(b1), std::move(w2),
                                    std::vector<double>(classes, 0.0));
}

/// Image with i.i.d. uniform [0, 1) pixels.
inline ImageTensor random_image(Shape shape, SeededRng& rng) {
  std::vector<double> v(shape.size());
  for (auto& x : v) x = rng.uniform();
  return ImageTensor(shape, std::move(v));
}

}  // namespace psba::zoo
