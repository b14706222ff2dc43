#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fedstain/image.hpp"
#include "fedstain/nn.hpp"
#include "fedstain/rng.hpp"

namespace fedstain::testing {

/// Naive two-pass moments in long double: mean, std, skewness, kurtosis.
struct OracleMoments {
  long double mean, std, skewness, kurtosis;
};

inline OracleMoments oracle_moments(std::span<const double> v) {
  long double sum = 0;
  for (double x : v) sum += x;
  const long double n = static_cast<long double>(v.size());
  const long double mean = sum / n;
  long double m2 = 0, m3 = 0, m4 = 0;
  for (double x : v) {
    const long double d = static_cast<long double>(x) - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const long double sd = std::sqrt(m2);
  return {mean, sd, m3 / (m2 * sd), m4 / (m2 * m2)};
}

inline double rel_err(long double got, long double want) {
  const long double denom = std::max<long double>(std::fabs(want), 1e-300L);
  return static_cast<double>(std::fabs(got - want) / denom);
}

inline ImageTensor random_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w,
                                ColorSpace cs = ColorSpace::LAB, double lo = -5.0,
                                double hi = 5.0) {
  ImageTensor img(c, h, w, cs);
  for (double& v : img.data()) v = uniform(rng, lo, hi);
  return img;
}

inline ImageTensor image_from(std::vector<double> values, std::size_t h, std::size_t w,
                              ColorSpace cs = ColorSpace::LAB) {
  const std::size_t c = values.size() / (h * w);
  return ImageTensor(c, h, w, cs, std::move(values));
}

/// Small encoder used for gradient checks: 16x16 input, ~300 parameters.
inline ModelConfig toy_model_config() {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.conv_channels = {3, 4, 5};
  cfg.embed_dim = 6;
  cfg.num_classes = 2;
  return cfg;
}

/// LAB-like images around (50, 0, 0) with labels alternating 0, 1.
inline std::vector<ImageTensor> toy_batch(Rng& rng, std::size_t n, std::size_t size,
                                          std::vector<int>* labels = nullptr) {
  std::vector<ImageTensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageTensor img(3, size, size, ColorSpace::LAB);
    for (std::size_t c = 0; c < 3; ++c)
      for (double& v : img.channel(c)) v = (c == 0 ? 50.0 : 0.0) + uniform(rng, -20.0, 20.0);
    out.push_back(std::move(img));
    if (labels) labels->push_back(static_cast<int>(i % 2));
  }
  return out;
}

/// |a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from
/// turning round-off into large relative errors.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  /// Parameters whose +-h perturbation flips a ReLU; re-checked at a step
  /// small enough to keep the activation pattern fixed.
  std::size_t kinks = 0;
};

/// Sign pattern of every post-ReLU activation of `model` on `batch`.
inline std::vector<char> relu_pattern(const Model& model, const ModelParams& params,
                                      std::span<const ImageTensor> batch) {
  std::vector<char> out;
  for (const auto& a : model.forward(params, batch).activations)
    for (Eigen::Index i = 0; i < a.size(); ++i) out.push_back(a.data()[i] > 0.0);
  return out;
}

using PatternFn = std::function<std::vector<char>(const ModelParams&)>;

/// Central differences over every parameter of both blocks. With `pattern`
/// given, a parameter whose perturbation changes the activation pattern is
/// differentiated again with successively smaller steps.
inline GradCheck finite_difference_check(const ModelParams& params, const Gradients& analytic,
                                         const std::function<double(const ModelParams&)>& f,
                                         double h = 1e-4, const PatternFn& pattern = {}) {
  GradCheck out;
  ModelParams p = params;
  const std::vector<char> base = pattern ? pattern(p) : std::vector<char>{};
  auto sweep = [&](std::vector<double>& block, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      const double keep = block[i];
      double step = h;
      for (int shrink = 0; shrink < 4; ++shrink, step *= 0.1) {
        if (!pattern) break;
        block[i] = keep + step;
        const bool up_same = pattern(p) == base;
        block[i] = keep - step;
        const bool down_same = pattern(p) == base;
        block[i] = keep;
        if (up_same && down_same) break;
      }
      out.kinks += step != h;
      block[i] = keep + step;
      const double up = f(p);
      block[i] = keep - step;
      const double down = f(p);
      block[i] = keep;
      out.worst = std::max(out.worst, grad_rel_err(grad[i], (up - down) / (2.0 * step)));
      ++out.checked;
    }
  };
  sweep(p.encoder, analytic.encoder);
  sweep(p.classifier, analytic.classifier);
  return out;
}

}  // namespace fedstain::testing
