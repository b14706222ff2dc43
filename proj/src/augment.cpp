#include "fedstain/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedstain/error.hpp"

namespace fedstain {

std::string_view to_string(AugOp op) {
  switch (op) {
    case AugOp::Identity: return "identity";
    case AugOp::HorizontalFlip: return "hflip";
    case AugOp::VerticalFlip: return "vflip";
    case AugOp::Rotate90: return "rotate90";
    case AugOp::SmallRotate: return "rotate";
    case AugOp::Scale: return "scale";
    case AugOp::Translate: return "translate";
  }
  return "?";
}

AugOp parse_aug_op(std::string_view s) {
  for (AugOp op : {AugOp::Identity, AugOp::HorizontalFlip, AugOp::VerticalFlip,
                   AugOp::Rotate90, AugOp::SmallRotate, AugOp::Scale, AugOp::Translate})
    if (to_string(op) == s) return op;
  throw InvalidArgument("unknown augmix op '" + std::string(s) + "'");
}

std::string_view to_string(MixStyleLevel level) {
  return level == MixStyleLevel::Feature ? "feature" : "pixel";
}

MixStyleLevel parse_mixstyle_level(std::string_view s) {
  if (s == "pixel") return MixStyleLevel::Pixel;
  if (s == "feature") return MixStyleLevel::Feature;
  throw InvalidArgument("unknown mixstyle level '" + std::string(s) + "'");
}

void AugmentConfig::validate() const {
  if (!(randstain_prob >= 0.0 && randstain_prob <= 1.0))
    throw InvalidArgument("randstain_prob must lie in [0, 1]");
  if (!(mixstyle_beta_alpha > 0.0)) throw InvalidArgument("mixstyle_beta_alpha must be > 0");
  if (augmix_chains < 1) throw InvalidArgument("augmix_chains must be >= 1");
  if (augmix_depth_min < 1 || augmix_depth_min > augmix_depth_max)
    throw InvalidArgument("augmix depth range must satisfy 1 <= min <= max");
  if (augmix_ops.empty()) throw InvalidArgument("augmix op set must be nonempty");
  if (force_lambda && !(*force_lambda >= 0.0 && *force_lambda <= 1.0))
    throw InvalidArgument("forced lambda must lie in [0, 1]");
}

namespace {

void check_view(const PoolView& view, const ImageTensor& image) {
  if (view.empty()) throw EmptyPool("statistic pool view is empty");
  for (const auto& e : view.entries()) {
    if (e.stats.channel_count() != image.channels())
      throw ShapeMismatch("pool record channel count does not match image");
    if (e.color_space != image.color_space())
      throw InvalidArgument("pool record color space does not match image");
  }
}

std::size_t draw_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
}

// Reflect a continuous coordinate into [0, n - 1].
double reflect(double t, std::size_t n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * static_cast<double>(n - 1);
  t = std::fmod(std::abs(t), period);
  return t > static_cast<double>(n - 1) ? period - t : t;
}

double bilinear(std::span<const double> ch, std::size_t h, std::size_t w, double y, double x) {
  y = reflect(y, h);
  x = reflect(x, w);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = ch[y0 * w + x0] * (1.0 - fx) + ch[y0 * w + x1] * fx;
  const double bot = ch[y1 * w + x0] * (1.0 - fx) + ch[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bot * fy;
}

// out(y, x) = in(map(y, x)) for an inverse coordinate map, bilinear + reflect.
template <typename Map>
ImageTensor warp(const ImageTensor& in, Map map) {
  ImageTensor out(in.channels(), in.height(), in.width(), in.color_space());
  const std::size_t h = in.height(), w = in.width();
  for (std::size_t c = 0; c < in.channels(); ++c) {
    const auto src = in.channel(c);
    auto dst = out.channel(c);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto [sy, sx] = map(static_cast<double>(y), static_cast<double>(x));
        dst[y * w + x] = bilinear(src, h, w, sy, sx);
      }
  }
  return out;
}

}  // namespace

ImageTensor randstain_with_targets(const ImageTensor& image, std::span<const double> target_mean,
                                   std::span<const double> target_std, bool literal_eq1) {
  if (target_mean.size() != image.channels() || target_std.size() != image.channels())
    throw ShapeMismatch("randstain targets do not match image channels");
  const ChannelStats s = compute_channel_stats(image, ConstantPolicy::Substitute);
  ImageTensor out = image;
  for (std::size_t c = 0; c < image.channels(); ++c) {
    const double mu = s.mean[c];
    const double gain = literal_eq1 ? target_std[c] : target_std[c] / s.std[c];
    for (double& v : out.channel(c)) v = (v - mu) * gain + target_mean[c];
  }
  return out;
}

ImageTensor randstain(const ImageTensor& image, const PoolView& view,
                      const AugmentConfig& cfg, Rng& rng) {
  if (uniform01(rng) >= cfg.randstain_prob) return image;
  check_view(view, image);
  const auto& rec = view[draw_index(rng, view.size())];
  return randstain_with_targets(image, rec.stats.mean, rec.stats.std, cfg.literal_eq1);
}

ImageTensor apply_aug_op(const ImageTensor& image, AugOp op, Rng& rng) {
  const std::size_t h = image.height(), w = image.width();
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  switch (op) {
    case AugOp::Identity:
      return image;
    case AugOp::HorizontalFlip: {
      ImageTensor out = image;
      for (std::size_t c = 0; c < image.channels(); ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
      return out;
    }
    case AugOp::VerticalFlip: {
      ImageTensor out = image;
      for (std::size_t c = 0; c < image.channels(); ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, h - 1 - y, x);
      return out;
    }
    case AugOp::Rotate90: {
      ImageTensor out = image;
      for (std::size_t c = 0; c < image.channels(); ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            // Non-square images get a half turn so the shape is preserved.
            out.at(c, y, x) = h == w ? image.at(c, h - 1 - x, y)
                                     : image.at(c, h - 1 - y, w - 1 - x);
      return out;
    }
    case AugOp::SmallRotate: {
      const double theta = uniform(rng, -15.0, 15.0) * std::numbers::pi / 180.0;
      const double ct = std::cos(theta), st = std::sin(theta);
      return warp(image, [&](double y, double x) {
        const double dy = y - cy, dx = x - cx;
        return std::pair{cy + st * dx + ct * dy, cx + ct * dx - st * dy};
      });
    }
    case AugOp::Scale: {
      const double s = uniform(rng, 0.9, 1.1);
      return warp(image, [&](double y, double x) {
        return std::pair{cy + (y - cy) / s, cx + (x - cx) / s};
      });
    }
    case AugOp::Translate: {
      const double ty = uniform(rng, -0.1, 0.1) * static_cast<double>(h);
      const double tx = uniform(rng, -0.1, 0.1) * static_cast<double>(w);
      return warp(image, [&](double y, double x) { return std::pair{y - ty, x - tx}; });
    }
  }
  return image;
}

ImageTensor augmix(const ImageTensor& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto chains = static_cast<std::size_t>(cfg.augmix_chains);
  const std::vector<double> weights = sample_dirichlet(rng, chains, 1.0);
  const double m = cfg.force_skip_weight ? *cfg.force_skip_weight : sample_beta(rng, 1.0, 1.0);

  std::vector<double> mix(image.size(), 0.0);
  for (std::size_t k = 0; k < chains; ++k) {
    const auto depth = uniform_int(rng, cfg.augmix_depth_min, cfg.augmix_depth_max);
    ImageTensor chain = image;
    for (std::int64_t d = 0; d < depth; ++d) {
      const AugOp op = cfg.augmix_ops[draw_index(rng, cfg.augmix_ops.size())];
      chain = apply_aug_op(chain, op, rng);
    }
    const auto src = chain.data();
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += weights[k] * src[i];
  }
  ImageTensor out = image;
  auto dst = out.data();
  const auto x = image.data();
  for (std::size_t i = 0; i < mix.size(); ++i) dst[i] = m * mix[i] + (1.0 - m) * x[i];
  return out;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> own_pair(const ImageTensor& image,
                                                             const ChannelStats& s,
                                                             const AugmentConfig& cfg) {
  switch (cfg.stat_kind) {
    case StatKind::SkewnessKurtosis: return {s.skewness, s.kurtosis};
    case StatKind::MeanStd: return {s.mean, s.std};
    default: {
      StatsPairOptions po;
      po.local_window = cfg.local_window;
      po.policy = ConstantPolicy::Substitute;
      auto p = compute_stats_pair(image, cfg.stat_kind, po);
      return {std::move(p.shift), std::move(p.scale)};
    }
  }
}

double draw_lambda(const AugmentConfig& cfg, Rng& rng) {
  return cfg.force_lambda ? *cfg.force_lambda
                          : sample_beta(rng, cfg.mixstyle_beta_alpha, cfg.mixstyle_beta_alpha);
}

}  // namespace

ImageTensor mixstyle_sample(const ImageTensor& image, const PoolView& view,
                            const AugmentConfig& cfg, Rng& rng, MixStyleTrace* trace) {
  check_view(view, image);
  const ChannelStats s = compute_channel_stats(image, ConstantPolicy::Substitute);
  const auto [shift, scale] = own_pair(image, s, cfg);
  const GenericStatsPair target = view.mixing_pair(draw_index(rng, view.size()), cfg.stat_kind);
  const double lambda = draw_lambda(cfg, rng);

  ImageTensor out = image;
  std::vector<double> beta(image.channels()), gamma(image.channels());
  for (std::size_t c = 0; c < image.channels(); ++c) {
    beta[c] = lambda * target.shift[c] + (1.0 - lambda) * shift[c];
    gamma[c] = lambda * target.scale[c] + (1.0 - lambda) * scale[c];
    const double mu = s.mean[c], sigma = s.std[c];
    for (double& v : out.channel(c)) v = gamma[c] * ((v - mu) / sigma) + beta[c];
  }
  if (trace) *trace = MixStyleTrace{lambda, std::move(beta), std::move(gamma)};
  return out;
}

std::vector<ImageTensor> mixstyle(std::span<const ImageTensor> batch, const PoolView& view,
                                  const AugmentConfig& cfg, Rng& rng) {
  if (batch.empty()) throw InvalidArgument("mixstyle: empty batch");
  std::vector<ImageTensor> out;
  out.reserve(batch.size());
  for (const auto& x : batch) out.push_back(mixstyle_sample(x, view, cfg, rng));
  return out;
}

std::vector<double> mixstyle_feature_block(std::span<double> block, std::size_t channels,
                                           const PoolView& view, const AugmentConfig& cfg,
                                           Rng& rng) {
  if (view.empty()) throw EmptyPool("statistic pool view is empty");
  if (channels == 0 || block.size() % channels != 0)
    throw ShapeMismatch("feature block size is not a multiple of its channel count");
  const std::size_t hw = block.size() / channels;
  const GenericStatsPair target = view.mixing_pair(draw_index(rng, view.size()), cfg.stat_kind);
  const std::size_t pool_channels = target.shift.size();
  const double lambda = draw_lambda(cfg, rng);

  std::vector<double> gains(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    auto values = block.subspan(c * hw, hw);
    Moments m = compute_moments(values);
    double shift = 0.0, scale = 0.0;
    const bool constant = m.std == 0.0;
    if (constant) {
      m.std = kConstantChannelStd;
      m.skewness = kConstantChannelSkewness;
      m.kurtosis = kConstantChannelKurtosis;
    }
    switch (cfg.stat_kind) {
      case StatKind::MeanStd: shift = m.mean; scale = m.std; break;
      case StatKind::SkewnessKurtosis: shift = m.skewness; scale = m.kurtosis; break;
      default:
        throw InvalidArgument("feature-level MixStyle supports mean_std and skewness_kurtosis only");
    }
    const double beta = lambda * target.shift[c % pool_channels] + (1.0 - lambda) * shift;
    const double gamma = lambda * target.scale[c % pool_channels] + (1.0 - lambda) * scale;
    for (double& v : values) v = gamma * ((v - m.mean) / m.std) + beta;
    // A constant channel maps to the constant beta: no input dependence.
    gains[c] = constant ? 0.0 : gamma / m.std;
  }
  return gains;
}

AugmentedViews make_views(const ImageTensor& image, const PoolView& view,
                          const AugmentConfig& cfg, Rng& rng) {
  Rng stain_rng(derive_seed(rng(), 0));
  Rng rng1(derive_seed(rng(), 1));
  Rng rng2(derive_seed(rng(), 2));
  AugmentedViews v;
  v.stain = randstain(image, view, cfg, stain_rng);
  v.view1 = augmix(image, cfg, rng1);
  v.view2 = augmix(image, cfg, rng2);
  if (cfg.mixstyle_level == MixStyleLevel::Pixel) {
    v.view1 = mixstyle_sample(v.view1, view, cfg, rng1);
    v.view2 = mixstyle_sample(v.view2, view, cfg, rng2);
  }
  return v;
}

}  // namespace fedstain
