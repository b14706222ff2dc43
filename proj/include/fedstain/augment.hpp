#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedstain/image.hpp"
#include "fedstain/rng.hpp"
#include "fedstain/stain_stats.hpp"

namespace fedstain {

enum class AugOp { Identity, HorizontalFlip, VerticalFlip, Rotate90, SmallRotate, Scale, Translate };
enum class MixStyleLevel { Pixel, Feature };

std::string_view to_string(AugOp op);
AugOp parse_aug_op(std::string_view s);
std::string_view to_string(MixStyleLevel level);
MixStyleLevel parse_mixstyle_level(std::string_view s);

struct AugmentConfig {
  double randstain_prob = 0.9;
  /// Shape of the symmetric Beta(a, a) that draws the MixStyle weight.
  double mixstyle_beta_alpha = 0.1;
  int augmix_chains = 3;
  int augmix_depth_min = 1;
  int augmix_depth_max = 3;
  std::vector<AugOp> augmix_ops = {AugOp::HorizontalFlip, AugOp::VerticalFlip,
                                   AugOp::Rotate90,       AugOp::SmallRotate,
                                   AugOp::Scale,          AugOp::Translate};
  /// Use (x - mu) * sigma' + mu' verbatim instead of the normalized form.
  bool literal_eq1 = false;
  MixStyleLevel mixstyle_level = MixStyleLevel::Pixel;
  /// Which exchanged pair plays the (shift, scale) roles in MixStyle.
  StatKind stat_kind = StatKind::SkewnessKurtosis;
  std::size_t local_window = 8;
  bool allow_self_fallback = true;

  // Test hooks: pin the otherwise random mixing weights.
  std::optional<double> force_lambda;
  std::optional<double> force_skip_weight;

  void validate() const;
};

/// RandStain: with probability p re-targets each channel to (mu', sigma')
/// taken from one pool record drawn for the whole image.
ImageTensor randstain(const ImageTensor& image, const PoolView& view,
                      const AugmentConfig& cfg, Rng& rng);

/// Applies the per-channel reconstruction with explicit targets.
ImageTensor randstain_with_targets(const ImageTensor& image, std::span<const double> target_mean,
                                   std::span<const double> target_std, bool literal_eq1);

ImageTensor apply_aug_op(const ImageTensor& image, AugOp op, Rng& rng);
ImageTensor augmix(const ImageTensor& image, const AugmentConfig& cfg, Rng& rng);

/// Mixed statistics actually used for one MixStyle sample.
struct MixStyleTrace {
  double lambda = 0.0;
  std::vector<double> beta_mix;
  std::vector<double> gamma_mix;
};

/// x_hat = gamma_mix * (x - mu) / sigma + beta_mix per channel, with
/// beta_mix = lambda * shift' + (1 - lambda) * shift(x) and likewise gamma.
ImageTensor mixstyle_sample(const ImageTensor& image, const PoolView& view,
                            const AugmentConfig& cfg, Rng& rng,
                            MixStyleTrace* trace = nullptr);
std::vector<ImageTensor> mixstyle(std::span<const ImageTensor> batch, const PoolView& view,
                                  const AugmentConfig& cfg, Rng& rng);

/// Feature-level variant on one sample's C_f x H x W activation block (in
/// place). Pool channel k mod C supplies channel k. Returns the per-channel
/// gain gamma_mix / sigma that the backward pass multiplies by.
std::vector<double> mixstyle_feature_block(std::span<double> block, std::size_t channels,
                                           const PoolView& view, const AugmentConfig& cfg,
                                           Rng& rng);

struct AugmentedViews {
  ImageTensor stain;
  ImageTensor view1;
  ImageTensor view2;
};

/// stain = RandStain(x); view_k = MixStyle(AugMix(x)) on independent streams.
/// In feature-level mode the views carry AugMix only; the encoder applies
/// MixStyle after its first block.
AugmentedViews make_views(const ImageTensor& image, const PoolView& view,
                          const AugmentConfig& cfg, Rng& rng);

}  // namespace fedstain
