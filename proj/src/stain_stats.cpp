#include "fedstain/stain_stats.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "fedstain/error.hpp"

namespace fedstain {

using json = nlohmann::json;

void ChannelStats::validate() const {
  const std::size_t c = mean.size();
  if (c == 0) throw InvalidArgument("ChannelStats has no channels");
  if (std.size() != c || skewness.size() != c || kurtosis.size() != c)
    throw InvalidArgument("ChannelStats field lengths disagree");
  for (std::size_t i = 0; i < c; ++i) {
    if (!(std[i] >= 0.0)) throw InvalidArgument("ChannelStats std must be >= 0");
    if (!std::isfinite(mean[i]) || !std::isfinite(skewness[i]) ||
        !std::isfinite(kurtosis[i]))
      throw InvalidArgument("ChannelStats contains non-finite values");
    if (kurtosis[i] < skewness[i] * skewness[i] + 1.0 - 1e-9)
      throw InvalidArgument("ChannelStats violates K >= S^2 + 1");
  }
}

Moments compute_moments(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw InvalidArgument("moments need at least two values");
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("moments need finite values");
    sum += v;
  }
  const double mean = sum / static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  Moments out;
  out.mean = mean;
  out.std = std::sqrt(m2);
  if (m2 > 0.0) {
    out.skewness = m3 / (m2 * out.std);
    out.kurtosis = m4 / (m2 * m2);
  }
  return out;
}

ChannelStats compute_channel_stats(const ImageTensor& image, ConstantPolicy policy,
                                   StatsWarnings* warnings) {
  if (image.pixels_per_channel() < 2)
    throw InvalidArgument("channel statistics need at least two pixels per channel");
  ChannelStats s;
  const std::size_t c = image.channels();
  s.mean.resize(c);
  s.std.resize(c);
  s.skewness.resize(c);
  s.kurtosis.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Moments m = compute_moments(image.channel(ch));
    s.mean[ch] = m.mean;
    if (m.std == 0.0) {
      if (policy == ConstantPolicy::Throw)
        throw ConstantChannel("channel " + std::to_string(ch) + " has zero variance");
      if (warnings) ++warnings->constant_channels;
      s.std[ch] = kConstantChannelStd;
      s.skewness[ch] = kConstantChannelSkewness;
      s.kurtosis[ch] = kConstantChannelKurtosis;
    } else {
      s.std[ch] = m.std;
      s.skewness[ch] = m.skewness;
      s.kurtosis[ch] = m.kurtosis;
    }
  }
  return s;
}

std::string_view to_string(StatKind kind) {
  switch (kind) {
    case StatKind::MeanStd: return "mean_std";
    case StatKind::Quantile90AndVariationCoefficient: return "quantile90_cv";
    case StatKind::LocalMeanAndLocalMAD: return "local_mean_mad";
    case StatKind::MeanAndIQR: return "mean_iqr";
    case StatKind::SkewnessKurtosis: return "skewness_kurtosis";
  }
  return "?";
}

StatKind parse_stat_kind(std::string_view s) {
  for (StatKind k : kAllStatKinds)
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown statistic kind '" + std::string(s) + "'");
}

double quantile_sorted(std::span<const double> sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 0) throw InvalidArgument("quantile of empty sequence");
  // 1-based fractional rank h such that p = (h - 0.5) / n.
  const double h = p * static_cast<double>(n) + 0.5;
  if (h <= 1.0) return sorted.front();
  if (h >= static_cast<double>(n)) return sorted.back();
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

// Non-overlapping w x w tiles (full tiles only): mean of tile means and mean
// of tile median-absolute-deviations.
std::pair<double, double> local_mean_mad(std::span<const double> channel,
                                         std::size_t height, std::size_t width,
                                         std::size_t w) {
  double mean_acc = 0.0, mad_acc = 0.0;
  std::size_t tiles = 0;
  std::vector<double> tile;
  tile.reserve(w * w);
  for (std::size_t ty = 0; ty + w <= height; ty += w) {
    for (std::size_t tx = 0; tx + w <= width; tx += w) {
      tile.clear();
      for (std::size_t y = ty; y < ty + w; ++y)
        for (std::size_t x = tx; x < tx + w; ++x) tile.push_back(channel[y * width + x]);
      const double m = std::accumulate(tile.begin(), tile.end(), 0.0) /
                       static_cast<double>(tile.size());
      const double med = median_of(tile);
      std::vector<double> dev(tile.size());
      for (std::size_t i = 0; i < tile.size(); ++i) dev[i] = std::abs(tile[i] - med);
      mean_acc += m;
      mad_acc += median_of(std::move(dev));
      ++tiles;
    }
  }
  return {mean_acc / static_cast<double>(tiles), mad_acc / static_cast<double>(tiles)};
}

}  // namespace

GenericStatsPair compute_stats_pair(const ImageTensor& image, StatKind kind,
                                    const StatsPairOptions& options,
                                    StatsWarnings* warnings) {
  if (image.size() == 0) throw InvalidArgument("empty image");
  if (kind == StatKind::LocalMeanAndLocalMAD &&
      (options.local_window == 0 || options.local_window > image.height() ||
       options.local_window > image.width()))
    throw InvalidWindow("local window " + std::to_string(options.local_window) +
                        " does not fit a " + std::to_string(image.height()) + "x" +
                        std::to_string(image.width()) + " image");

  GenericStatsPair out;
  out.kind = kind;
  const std::size_t c = image.channels();
  out.shift.resize(c);
  out.scale.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto values = image.channel(ch);
    const Moments m = compute_moments(values);
    const bool constant = m.std == 0.0;
    if (constant) {
      if (options.policy == ConstantPolicy::Throw)
        throw ConstantChannel("channel " + std::to_string(ch) + " has zero variance");
      out.constant_flagged = true;
      if (warnings) ++warnings->constant_channels;
    }
    switch (kind) {
      case StatKind::MeanStd:
        out.shift[ch] = m.mean;
        out.scale[ch] = m.std;
        break;
      case StatKind::SkewnessKurtosis:
        out.shift[ch] = constant ? kConstantChannelSkewness : m.skewness;
        out.scale[ch] = constant ? kConstantChannelKurtosis : m.kurtosis;
        break;
      case StatKind::Quantile90AndVariationCoefficient: {
        std::vector<double> sorted(values.begin(), values.end());
        std::sort(sorted.begin(), sorted.end());
        out.shift[ch] = quantile_sorted(sorted, 0.9);
        out.scale[ch] = m.std / std::max(std::abs(m.mean), 1e-6);
        break;
      }
      case StatKind::MeanAndIQR: {
        std::vector<double> sorted(values.begin(), values.end());
        std::sort(sorted.begin(), sorted.end());
        out.shift[ch] = m.mean;
        out.scale[ch] = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
        break;
      }
      case StatKind::LocalMeanAndLocalMAD: {
        const auto [lm, lmad] =
            local_mean_mad(values, image.height(), image.width(), options.local_window);
        out.shift[ch] = lm;
        out.scale[ch] = lmad;
        break;
      }
    }
  }
  return out;
}

GenericStatsPair mixing_pair(const StatRecord& record, StatKind kind) {
  GenericStatsPair p;
  p.kind = kind;
  switch (kind) {
    case StatKind::MeanStd:
      p.shift = record.stats.mean;
      p.scale = record.stats.std;
      return p;
    case StatKind::SkewnessKurtosis:
      p.shift = record.stats.skewness;
      p.scale = record.stats.kurtosis;
      return p;
    default:
      if (!record.extra_pair || record.extra_pair->kind != kind)
        throw InvalidArgument("record does not carry a '" + std::string(to_string(kind)) +
                              "' statistic pair");
      return *record.extra_pair;
  }
}

std::size_t upload_count(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidArgument("statistic ratio must lie in (0, 1]");
  if (n == 0) return 0;
  // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004.
  const double raw = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(raw), 1, n);
}

std::vector<StatRecord> sample_statistics(const ClientDataset& dataset, double ratio,
                                          Rng& rng, const SampleStatsOptions& options,
                                          StatsWarnings* warnings) {
  if (dataset.size() == 0) throw InvalidArgument("sample_statistics: empty dataset");
  const std::size_t count = upload_count(dataset.size(), ratio);
  const auto picks = sample_without_replacement(rng, dataset.size(), count);
  const bool needs_extra = options.kind != StatKind::MeanStd &&
                           options.kind != StatKind::SkewnessKurtosis;
  std::vector<StatRecord> out;
  out.reserve(count);
  for (std::size_t idx : picks) {
    const Sample& s = dataset.samples[idx];
    const ImageTensor img = to_color_space(s.image, options.color_space);
    StatRecord rec;
    rec.client_id = dataset.client_id;
    rec.sample_id = s.sample_id.empty() ? std::to_string(idx) : s.sample_id;
    rec.color_space = options.color_space;
    rec.stats = compute_channel_stats(img, ConstantPolicy::Substitute, warnings);
    if (needs_extra) {
      StatsPairOptions po;
      po.local_window = options.local_window;
      po.policy = ConstantPolicy::Substitute;
      rec.extra_pair = compute_stats_pair(img, options.kind, po);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

PoolView::Entry to_entry(const StatRecord& r) {
  return PoolView::Entry{r.client_id, r.sample_id, r.color_space, r.stats, r.extra_pair};
}

GenericStatsPair PoolView::mixing_pair(std::size_t i, StatKind kind) const {
  const Entry& e = entries_.at(i);
  StatRecord r{e.client_id, e.sample_id, e.color_space, e.stats, e.extra_pair};
  return fedstain::mixing_pair(r, kind);
}

PoolView PoolView::with_fallback(std::span<const StatRecord> own) const {
  if (!entries_.empty()) return *this;
  std::vector<Entry> entries;
  entries.reserve(own.size());
  for (const auto& r : own) entries.push_back(to_entry(r));
  return PoolView(std::move(entries));
}

StatPool build_pool(const std::map<std::string, std::vector<StatRecord>>& uploads,
                    std::uint64_t round) {
  StatPool pool;
  pool.round = round;
  for (const auto& [client, records] : uploads) {
    if (client.empty()) throw InvalidArgument("statistic upload without client id");
    pool.roster.push_back(client);
    for (const auto& r : records) {
      if (r.client_id != client)
        throw InvalidArgument("record client id '" + r.client_id +
                              "' does not match uploader '" + client + "'");
      r.stats.validate();
      pool.records.push_back(r);
    }
  }
  return pool;
}

PoolView pool_view(const StatPool& pool, std::string_view client_id) {
  if (std::find(pool.roster.begin(), pool.roster.end(), client_id) == pool.roster.end())
    throw UnknownClient("client '" + std::string(client_id) + "' is not in the round roster");
  std::vector<PoolView::Entry> entries;
  for (const auto& r : pool.records)
    if (r.client_id != client_id) entries.push_back(to_entry(r));
  return PoolView(std::move(entries));
}

double standard_normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

DistributionDiagnostics analyze_distribution(std::span<const double> values,
                                             std::size_t bins) {
  if (values.size() < 32) throw InvalidArgument("analyze_distribution needs >= 32 values");
  if (bins == 0) throw InvalidArgument("analyze_distribution needs >= 1 bin");
  const Moments m = compute_moments(values);
  if (m.std == 0.0) throw DegenerateInput("distribution has zero variance");

  DistributionDiagnostics d;
  d.fit_mean = m.mean;
  d.fit_std = m.std;
  d.skewness = m.skewness;
  d.excess_kurtosis = m.kurtosis - 3.0;

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  const double width = (hi - lo) / static_cast<double>(bins);
  d.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) d.bin_edges[i] = lo + width * static_cast<double>(i);
  d.bin_edges.back() = hi;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : sorted) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    counts[std::min(b, bins - 1)]++;
  }
  const double n = static_cast<double>(sorted.size());
  d.densities.resize(bins);
  for (std::size_t i = 0; i < bins; ++i)
    d.densities[i] = static_cast<double>(counts[i]) / (n * (d.bin_edges[i + 1] - d.bin_edges[i]));

  d.qq_points.resize(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const double p = (static_cast<double>(k) + 0.5) / n;
    d.qq_points[k] = {standard_normal_quantile(p), sorted[k]};
  }
  return d;
}

// ---------------------------------------------------------------------------

namespace {

json record_json(const StatRecord& r, std::uint64_t round) {
  json j;
  j["round"] = round;
  j["client_id"] = r.client_id;
  j["sample_id"] = r.sample_id;
  j["color_space"] = std::string(to_string(r.color_space));
  j["mean"] = r.stats.mean;
  j["std"] = r.stats.std;
  j["skew"] = r.stats.skewness;
  j["kurt"] = r.stats.kurtosis;
  if (r.extra_pair) {
    j["pair_kind"] = std::string(to_string(r.extra_pair->kind));
    j["shift"] = r.extra_pair->shift;
    j["scale"] = r.extra_pair->scale;
  }
  return j;
}

}  // namespace

std::string stat_record_to_line(const StatRecord& record, std::uint64_t round) {
  return record_json(record, round).dump();
}

StatRecord stat_record_from_line(std::string_view line, std::uint64_t* round) {
  static const std::set<std::string> kKeys = {"round", "client_id", "sample_id",
                                              "color_space", "mean", "std", "skew",
                                              "kurt", "pair_kind", "shift", "scale"};
  try {
    const json j = json::parse(line);
    for (const auto& [k, _] : j.items())
      if (!kKeys.count(k)) throw FormatError("unknown stat record field '" + k + "'");
    StatRecord r;
    if (round) *round = j.at("round").get<std::uint64_t>();
    r.client_id = j.at("client_id").get<std::string>();
    r.sample_id = j.at("sample_id").get<std::string>();
    r.color_space = parse_color_space(j.at("color_space").get<std::string>());
    r.stats.mean = j.at("mean").get<std::vector<double>>();
    r.stats.std = j.at("std").get<std::vector<double>>();
    r.stats.skewness = j.at("skew").get<std::vector<double>>();
    r.stats.kurtosis = j.at("kurt").get<std::vector<double>>();
    if (j.contains("pair_kind")) {
      GenericStatsPair p;
      p.kind = parse_stat_kind(j.at("pair_kind").get<std::string>());
      p.shift = j.at("shift").get<std::vector<double>>();
      p.scale = j.at("scale").get<std::vector<double>>();
      r.extra_pair = std::move(p);
    }
    if (r.client_id.empty()) throw FormatError("stat record with empty client_id");
    r.stats.validate();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed stat record: ") + e.what());
  }
}

void write_stat_records(std::ostream& out, std::span<const StatRecord> records,
                        std::uint64_t round) {
  for (const auto& r : records) out << stat_record_to_line(r, round) << '\n';
}

std::vector<StatRecord> read_stat_records(std::istream& in) {
  std::vector<StatRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(stat_record_from_line(line));
  return out;
}

void write_histogram_csv(std::ostream& out, const DistributionDiagnostics& d) {
  out << "bin_left,bin_right,density\n";
  out.precision(17);
  for (std::size_t i = 0; i < d.densities.size(); ++i)
    out << d.bin_edges[i] << ',' << d.bin_edges[i + 1] << ',' << d.densities[i] << '\n';
}

void write_qq_csv(std::ostream& out, const DistributionDiagnostics& d) {
  out << "theoretical_q,empirical_q\n";
  out.precision(17);
  for (const auto& [t, e] : d.qq_points) out << t << ',' << e << '\n';
}

}  // namespace fedstain
