#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedstain/dataset.hpp"
#include "fedstain/image.hpp"
#include "fedstain/rng.hpp"
#include "fedstain/stain_stats.hpp"

namespace fedstain {

// ---------------------------------------------------------------------------
// Synthetic stain-shifted domains.

struct ChannelTarget {
  double mean = 0.0;
  double std = 1.0;
  double skewness = 0.0;
  double kurtosis = 3.0;
  /// Dark structures: the brightest geometry maps to the lowest values.
  bool inverted = false;
};

struct DomainSpec {
  std::string name;
  std::vector<ChannelTarget> targets;  // one per LAB channel
  std::uint64_t texture_seed = 0;
  std::size_t n_samples = 0;
  double class_balance = 0.5;  // probability of label 1
  std::size_t image_size = 32;
  /// Per-image jitter: mean shift in units of the channel std, and the
  /// standard deviation of the log std factor.
  double mean_jitter = 0.05;
  double std_jitter = 0.03;

  void validate() const;
};

/// Shipped three-domain benchmark: right-skewed, left-skewed/leptokurtic and
/// symmetric/platykurtic L channels.
std::vector<DomainSpec> default_domain_specs(std::size_t n_samples = 2000,
                                             std::size_t image_size = 32);

/// Monotone map z -> sinh(tail * asinh(z) + skew) on a fixed set of normal
/// scores, standardized so the set has zero mean and unit variance.
struct ShapeTransform {
  double tail = 1.0;
  double skew = 0.0;
  double offset = 0.0;
  double scale = 1.0;
  double apply(double z) const;
};

/// Normal scores Phi^{-1}((k - 0.5) / n), k = 1..n.
std::vector<double> normal_scores(std::size_t n);

/// Solves for the transform whose image of normal_scores(n) has the given
/// skewness and raw kurtosis. Throws InfeasibleShape when the moment
/// inequality fails or the family cannot reach the target.
ShapeTransform solve_shape(double skewness, double kurtosis, std::size_t n);

/// Label-carrying geometry for one sample: round blobs for label 1,
/// elongated streaks of equal area for label 0. Depends only on
/// (texture_seed, index).
struct Geometry {
  int label = 0;
  std::vector<std::vector<double>> fields;  // per channel, H*W
};
Geometry generate_geometry(std::uint64_t texture_seed, std::size_t index, std::size_t size,
                           std::size_t channels, double class_balance);

/// n_samples LAB images whose channel distributions follow the targets.
std::vector<Sample> generate_domain(const DomainSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Patch extraction and quality control.

struct QualityThresholds {
  double max_white_fraction = 0.85;
  double min_edge_complexity = 0.02;
  double min_color_spread = 0.01;
};

enum class RejectReason { None, WhiteFraction, EdgeComplexity, ColorSpread };
std::string_view to_string(RejectReason r);

struct QualityVerdict {
  bool accepted = true;
  RejectReason reason = RejectReason::None;
  double white_fraction = 0.0;
  double edge_complexity = 0.0;
  double color_spread = 0.0;
};

/// Luminance > 0.9 counts as white; edge complexity is the mean gradient
/// magnitude of luminance; color spread is the smallest RGB channel std.
QualityVerdict quality_filter(const ImageTensor& patch, const QualityThresholds& thresholds = {});

struct PatchSpec {
  std::size_t patch_size = 128;
  std::size_t max_center_attempts = 3;
  QualityThresholds quality;
  double negative_ratio = 1.0;
  /// Test hook: every random placement is treated as failed.
  bool force_placement_failure = false;

  void validate() const;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Patch {
  ImageTensor image;
  int label = 1;
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t attempts = 0;
  bool corner_fallback = false;
};

struct PatchWarnings {
  std::vector<std::string> messages;
};

/// One positive patch per annotation. Each attempt offsets the patch centre
/// by up to a quarter of the patch size from the annotation; after
/// max_center_attempts out-of-bounds placements the patch is anchored at
/// the image corner nearest the annotation.
std::vector<Patch> extract_patches(const ImageTensor& image, std::span<const Point> annotations,
                                   const PatchSpec& spec, Rng& rng);

/// Up to `count` label-0 patches containing no annotation.
std::vector<Patch> sample_negatives(const ImageTensor& image, std::span<const Point> annotations,
                                    std::size_t count, const PatchSpec& spec, Rng& rng,
                                    PatchWarnings* warnings = nullptr);

/// "x,y" rows; a non-numeric first row is treated as a header.
std::vector<Point> read_annotations_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests.

struct ManifestEntry {
  std::string path;  // relative to the manifest root
  int label = 0;
};

struct ManifestDomain {
  std::string name;
  std::vector<ManifestEntry> entries;
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;
  std::filesystem::path root;
  int format_version = kFormatVersion;
  std::vector<ManifestDomain> domains;
};

inline constexpr const char* kManifestFileName = "manifest.txt";

std::string manifest_to_string(const DatasetManifest& manifest);
DatasetManifest manifest_from_string(const std::string& text, const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest);
/// Accepts a manifest file or a directory containing manifest.txt; checks
/// that every referenced file exists.
DatasetManifest read_manifest(const std::filesystem::path& path);

/// One dataset per domain (client_id = domain name), images converted to
/// `color_space`.
std::vector<ClientDataset> load_manifest(const DatasetManifest& manifest,
                                         ColorSpace color_space = ColorSpace::LAB);

/// Generated domain after 8-bit quantization and quality filtering, exactly
/// as build_synthetic_dataset stores it.
ClientDataset synthesize_domain(const DomainSpec& spec, std::uint64_t seed,
                                const QualityThresholds& thresholds = {});

struct DomainBuildSummary {
  std::string name;
  std::size_t n_samples = 0;
  std::size_t n_label1 = 0;
  std::size_t rejected = 0;
  ChannelStats realized;  // pooled over all stored pixels
};

struct BuildReport {
  std::filesystem::path manifest_path;
  std::vector<DomainBuildSummary> domains;
};

BuildReport build_synthetic_dataset(std::span<const DomainSpec> specs,
                                    const std::filesystem::path& out_dir, std::uint64_t seed,
                                    const QualityThresholds& thresholds = {});

/// Channel statistics of all pixels of all samples taken together.
ChannelStats pooled_channel_stats(std::span<const Sample> samples);

}  // namespace fedstain
