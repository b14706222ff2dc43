#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedstain/dataset.hpp"
#include "fedstain/image.hpp"
#include "fedstain/rng.hpp"

namespace fedstain {

/// Per-channel population moments. Kurtosis is raw (Gaussian -> 3).
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<double> skewness;
  std::vector<double> kurtosis;

  std::size_t channel_count() const noexcept { return mean.size(); }
  /// Throws InvalidArgument when field lengths disagree, std < 0, or the
  /// moment inequality K >= S^2 + 1 is violated beyond rounding.
  void validate() const;

  bool operator==(const ChannelStats&) const = default;
};

/// Substitutes used for a zero-variance channel.
inline constexpr double kConstantChannelStd = 1e-6;
inline constexpr double kConstantChannelSkewness = 0.0;
inline constexpr double kConstantChannelKurtosis = 3.0;

enum class ConstantPolicy { Throw, Substitute };

struct StatsWarnings {
  std::size_t constant_channels = 0;
};

ChannelStats compute_channel_stats(const ImageTensor& image,
                                   ConstantPolicy policy = ConstantPolicy::Throw,
                                   StatsWarnings* warnings = nullptr);

/// Moments of a single run of values, same conventions as above.
struct Moments {
  double mean = 0.0;
  double std = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;
};
Moments compute_moments(std::span<const double> values);

// ---------------------------------------------------------------------------
// Pluggable (shift, scale) statistic pairs for the exchanged-statistic ablation.

enum class StatKind {
  MeanStd,
  Quantile90AndVariationCoefficient,
  LocalMeanAndLocalMAD,
  MeanAndIQR,
  SkewnessKurtosis,
};

std::string_view to_string(StatKind kind);
StatKind parse_stat_kind(std::string_view s);
inline constexpr StatKind kAllStatKinds[] = {
    StatKind::MeanStd, StatKind::Quantile90AndVariationCoefficient,
    StatKind::LocalMeanAndLocalMAD, StatKind::MeanAndIQR,
    StatKind::SkewnessKurtosis};

struct GenericStatsPair {
  StatKind kind = StatKind::SkewnessKurtosis;
  std::vector<double> shift;
  std::vector<double> scale;
  bool constant_flagged = false;

  bool operator==(const GenericStatsPair&) const = default;
};

struct StatsPairOptions {
  std::size_t local_window = 8;
  ConstantPolicy policy = ConstantPolicy::Throw;
};

GenericStatsPair compute_stats_pair(const ImageTensor& image, StatKind kind,
                                    const StatsPairOptions& options = {},
                                    StatsWarnings* warnings = nullptr);

/// Quantile of ascending-sorted values with plotting positions (k - 0.5)/n
/// and linear interpolation between neighbouring order statistics; clamps to
/// the extremes outside [0.5/n, 1 - 0.5/n].
double quantile_sorted(std::span<const double> sorted, double p);

// ---------------------------------------------------------------------------
// Federated statistic records and pool.

struct StatRecord {
  std::string client_id;
  std::string sample_id;
  ColorSpace color_space = ColorSpace::LAB;
  ChannelStats stats;
  /// Present only when the run exchanges a pair that cannot be derived from
  /// `stats` (quantile / local / IQR ablation kinds).
  std::optional<GenericStatsPair> extra_pair;

  bool operator==(const StatRecord&) const = default;
};

/// The (shift, scale) roles a record plays in MixStyle for the given kind.
GenericStatsPair mixing_pair(const StatRecord& record, StatKind kind);

struct SampleStatsOptions {
  StatKind kind = StatKind::SkewnessKurtosis;
  std::size_t local_window = 8;
  ColorSpace color_space = ColorSpace::LAB;
};

/// Number of records uploaded for a client with n samples: ceil(r * n).
std::size_t upload_count(std::size_t n, double ratio);

/// Draws ceil(r * n_i) samples without replacement and records their stats.
/// Zero-variance channels are substituted and counted in `warnings`.
std::vector<StatRecord> sample_statistics(const ClientDataset& dataset, double ratio,
                                          Rng& rng,
                                          const SampleStatsOptions& options = {},
                                          StatsWarnings* warnings = nullptr);

/// What a client is allowed to see of the pool: statistics only, never pixels.
class PoolView {
 public:
  struct Entry {
    std::string client_id;
    std::string sample_id;
    ColorSpace color_space = ColorSpace::LAB;
    ChannelStats stats;
    std::optional<GenericStatsPair> extra_pair;
  };

  PoolView() = default;
  explicit PoolView(std::vector<Entry> entries) : entries_(std::move(entries)) {}

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  GenericStatsPair mixing_pair(std::size_t i, StatKind kind) const;

  /// An empty view falls back to the recipient's own records.
  PoolView with_fallback(std::span<const StatRecord> own) const;

 private:
  std::vector<Entry> entries_;
};

PoolView::Entry to_entry(const StatRecord& record);

struct StatPool {
  std::vector<StatRecord> records;
  std::vector<std::string> roster;
  std::uint64_t round = 0;
};

/// Builds the pool from per-client uploads; every uploading client joins the
/// roster even if it sent zero records.
StatPool build_pool(const std::map<std::string, std::vector<StatRecord>>& uploads,
                    std::uint64_t round = 0);
PoolView pool_view(const StatPool& pool, std::string_view client_id);

// ---------------------------------------------------------------------------
// Distribution diagnostics.

struct DistributionDiagnostics {
  std::vector<double> bin_edges;  // bins + 1 entries
  std::vector<double> densities;  // bins entries
  double fit_mean = 0.0;
  double fit_std = 0.0;
  std::vector<std::pair<double, double>> qq_points;  // (theoretical, empirical)
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

DistributionDiagnostics analyze_distribution(std::span<const double> values,
                                             std::size_t bins);
double standard_normal_quantile(double p);

// ---------------------------------------------------------------------------
// Serialization.

/// One JSON object per line: round, client_id, sample_id, color_space,
/// mean, std, skew, kurt (+ pair_kind, shift, scale when present).
std::string stat_record_to_line(const StatRecord& record, std::uint64_t round);
StatRecord stat_record_from_line(std::string_view line, std::uint64_t* round = nullptr);
void write_stat_records(std::ostream& out, std::span<const StatRecord> records,
                        std::uint64_t round);
std::vector<StatRecord> read_stat_records(std::istream& in);

void write_histogram_csv(std::ostream& out, const DistributionDiagnostics& diag);
void write_qq_csv(std::ostream& out, const DistributionDiagnostics& diag);

}  // namespace fedstain
