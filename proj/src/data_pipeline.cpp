#include "fedstain/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fedstain/error.hpp"

namespace fedstain {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Specs.

void DomainSpec::validate() const {
  if (name.empty() || name.find_first_of(",/\\ \t\n") != std::string::npos)
    throw InvalidArgument("domain name must be non-empty without separators or spaces");
  if (targets.size() != 3) throw InvalidArgument("domain '" + name + "' needs 3 channel targets");
  for (const auto& t : targets) {
    if (!(t.std > 0.0) || !std::isfinite(t.mean) || !std::isfinite(t.std))
      throw InvalidArgument("domain '" + name + "': channel std must be positive");
    if (!std::isfinite(t.skewness) || !std::isfinite(t.kurtosis) ||
        t.kurtosis < t.skewness * t.skewness + 1.0)
      throw InfeasibleShape("domain '" + name + "': kurtosis must be at least skewness^2 + 1");
  }
  if (n_samples == 0) throw InvalidArgument("domain '" + name + "': n_samples must be positive");
  if (!(class_balance > 0.0 && class_balance < 1.0))
    throw InvalidArgument("domain '" + name + "': class_balance must lie in (0, 1)");
  if (image_size < 8) throw InvalidArgument("domain '" + name + "': image_size must be >= 8");
  if (!(mean_jitter >= 0.0) || !(std_jitter >= 0.0))
    throw InvalidArgument("domain '" + name + "': jitter must be non-negative");
}

std::vector<DomainSpec> default_domain_specs(std::size_t n_samples, std::size_t image_size) {
  auto make = [&](std::string name, std::uint64_t texture, std::array<ChannelTarget, 3> t) {
    DomainSpec s;
    s.name = std::move(name);
    s.targets.assign(t.begin(), t.end());
    s.texture_seed = texture;
    s.n_samples = n_samples;
    s.image_size = image_size;
    return s;
  };
  return {
      make("right_skewed", 101,
           {ChannelTarget{66.0, 8.0, 0.413, 3.29, true}, ChannelTarget{18.0, 4.0, 0.413, 3.29},
            ChannelTarget{-10.0, 3.0, 0.413, 3.29, true}}),
      make("left_skewed", 202,
           {ChannelTarget{60.0, 9.0, -0.9, 4.5, true}, ChannelTarget{22.0, 4.0, -0.6, 4.0},
            ChannelTarget{-14.0, 3.0, -0.6, 4.0, true}}),
      make("platykurtic", 303,
           {ChannelTarget{76.0, 5.0, 0.0, 2.4, true}, ChannelTarget{12.0, 3.0, 0.0, 2.4},
            ChannelTarget{-5.0, 2.5, 0.0, 2.4, true}}),
  };
}

// ---------------------------------------------------------------------------
// Shape transform.

double ShapeTransform::apply(double z) const {
  return (std::sinh(tail * std::asinh(z) + skew) - offset) / scale;
}

std::vector<double> normal_scores(std::size_t n) {
  if (n == 0) throw InvalidArgument("normal_scores: n must be positive");
  std::vector<double> z(n);
  for (std::size_t k = 0; k < n; ++k)
    z[k] = standard_normal_quantile((static_cast<double>(k) + 0.5) / static_cast<double>(n));
  return z;
}

namespace {

struct ShapeMoments {
  double skewness, kurtosis, mean, std;
};

ShapeMoments shape_moments(std::span<const double> scores, double tail, double skew) {
  std::vector<double> v(scores.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sinh(tail * std::asinh(scores[i]) + skew);
  const Moments m = compute_moments(v);
  return {m.skewness, m.kurtosis, m.mean, m.std};
}

}  // namespace

ShapeTransform solve_shape(double skewness, double kurtosis, std::size_t n) {
  if (!(kurtosis >= skewness * skewness + 1.0))
    throw InfeasibleShape("kurtosis must be at least skewness^2 + 1");
  const auto scores = normal_scores(n);
  // Newton iteration on (log tail, skew) with a finite-difference Jacobian.
  double u = std::log(std::clamp(1.0 + 0.25 * (kurtosis - 3.0), 0.3, 3.0));
  double e = 0.3 * skewness;
  auto residual = [&](double uu, double ee) {
    const auto m = shape_moments(scores, std::exp(uu), ee);
    return std::array<double, 2>{m.skewness - skewness, m.kurtosis - kurtosis};
  };
  auto norm = [](const std::array<double, 2>& r) { return std::hypot(r[0], r[1]); };
  std::array<double, 2> r = residual(u, e);
  for (int iter = 0; iter < 200 && norm(r) > 1e-11; ++iter) {
    constexpr double h = 1e-6;
    const auto ru = residual(u + h, e);
    const auto re = residual(u, e + h);
    const double j00 = (ru[0] - r[0]) / h, j01 = (re[0] - r[0]) / h;
    const double j10 = (ru[1] - r[1]) / h, j11 = (re[1] - r[1]) / h;
    const double det = j00 * j11 - j01 * j10;
    if (!std::isfinite(det) || std::abs(det) < 1e-14) break;
    const double du = (j11 * r[0] - j01 * r[1]) / det;
    const double de = (-j10 * r[0] + j00 * r[1]) / det;
    double step = 1.0;
    bool improved = false;
    for (int k = 0; k < 40; ++k, step *= 0.5) {
      const double nu = std::clamp(u - step * du, std::log(0.02), std::log(20.0));
      const double ne = std::clamp(e - step * de, -20.0, 20.0);
      const auto nr = residual(nu, ne);
      if (std::isfinite(nr[0]) && std::isfinite(nr[1]) && norm(nr) < norm(r)) {
        u = nu;
        e = ne;
        r = nr;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (!(norm(r) < 1e-8))
    throw InfeasibleShape("no sinh-arcsinh transform reaches skewness " +
                          std::to_string(skewness) + ", kurtosis " + std::to_string(kurtosis));
  const auto m = shape_moments(scores, std::exp(u), e);
  return ShapeTransform{std::exp(u), e, m.mean, m.std};
}

// ---------------------------------------------------------------------------
// Geometry and generation.

Geometry generate_geometry(std::uint64_t texture_seed, std::size_t index, std::size_t size,
                           std::size_t channels, double class_balance) {
  Rng rng(derive_seed(texture_seed, static_cast<std::uint64_t>(index)));
  Geometry g;
  g.label = uniform01(rng) < class_balance ? 1 : 0;
  const std::size_t n = size * size;
  const double s = static_cast<double>(size);

  std::vector<double> shapes(n, 0.0);
  const auto count = uniform_int(rng, 3, 6);
  for (std::int64_t k = 0; k < count; ++k) {
    const double cx = uniform(rng, 2.0, s - 3.0), cy = uniform(rng, 2.0, s - 3.0);
    const double radius = uniform(rng, 1.5, 2.5) * s / 32.0;
    const double amp = uniform(rng, 0.8, 1.2);
    const double angle = uniform(rng, 0.0, std::numbers::pi);
    // Equal-area footprints: blobs are isotropic, streaks are 4:1.
    const double sa = g.label == 1 ? radius : 2.0 * radius;
    const double sb = g.label == 1 ? radius : 0.5 * radius;
    const double ca = std::cos(angle), sn = std::sin(angle);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double a = ca * dx + sn * dy, b = -sn * dx + ca * dy;
        shapes[y * size + x] += amp * std::exp(-0.5 * (a * a / (sa * sa) + b * b / (sb * sb)));
      }
  }

  auto smooth_noise = [&](double amplitude) {
    std::vector<double> w(n), out(n, 0.0);
    for (auto& v : w) v = standard_normal(rng);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int oy = -1; oy <= 1; ++oy)
          for (int ox = -1; ox <= 1; ++ox) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + oy;
            const auto xx = static_cast<std::ptrdiff_t>(x) + ox;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(size) ||
                xx >= static_cast<std::ptrdiff_t>(size))
              continue;
            acc += w[static_cast<std::size_t>(yy) * size + static_cast<std::size_t>(xx)];
            ++cnt;
          }
        out[y * size + x] = amplitude * acc / cnt;
      }
    return out;
  };

  const auto background = smooth_noise(0.15);
  g.fields.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    auto& f = g.fields[c];
    f.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      f[i] = shapes[i] + background[i] + 0.05 * standard_normal(rng);
  }
  return g;
}

namespace {

struct ChannelPlan {
  std::vector<double> sorted_values;  // standardized, ascending
};

std::vector<ChannelPlan> plan_channels(const DomainSpec& spec) {
  const std::size_t n = spec.image_size * spec.image_size;
  const auto scores = normal_scores(n);
  std::vector<ChannelPlan> plans;
  for (const auto& t : spec.targets) {
    const ShapeTransform tr = solve_shape(t.skewness, t.kurtosis, n);
    ChannelPlan p;
    p.sorted_values.resize(n);
    for (std::size_t k = 0; k < n; ++k) p.sorted_values[k] = tr.apply(scores[k]);
    plans.push_back(std::move(p));
  }
  return plans;
}

Sample generate_sample(const DomainSpec& spec, const std::vector<ChannelPlan>& plans,
                       std::size_t index, Rng& rng) {
  const std::size_t size = spec.image_size, n = size * size;
  const Geometry geo =
      generate_geometry(spec.texture_seed, index, size, spec.targets.size(), spec.class_balance);
  ImageTensor img(spec.targets.size(), size, size, ColorSpace::LAB);
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < spec.targets.size(); ++c) {
    const auto& t = spec.targets[c];
    const double mean = t.mean + spec.mean_jitter * t.std * standard_normal(rng);
    const double sd = t.std * std::exp(spec.std_jitter * standard_normal(rng));
    const auto& field = geo.fields[c];
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
    auto out = img.channel(c);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t rank = t.inverted ? n - 1 - k : k;
      out[order[k]] = mean + sd * plans[c].sorted_values[rank];
    }
  }
  std::ostringstream id;
  id << spec.name << '/' << std::setw(6) << std::setfill('0') << index;
  return Sample{std::move(img), geo.label, id.str()};
}

}  // namespace

std::vector<Sample> generate_domain(const DomainSpec& spec, Rng& rng) {
  spec.validate();
  const auto plans = plan_channels(spec);
  std::vector<Sample> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i)
    out.push_back(generate_sample(spec, plans, i, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Quality filter.

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "none";
    case RejectReason::WhiteFraction: return "white_fraction";
    case RejectReason::EdgeComplexity: return "edge_complexity";
    case RejectReason::ColorSpread: return "color_spread";
  }
  return "?";
}

QualityVerdict quality_filter(const ImageTensor& patch, const QualityThresholds& thresholds) {
  const ImageTensor rgb = to_color_space(patch, ColorSpace::RGB);
  const std::size_t h = rgb.height(), w = rgb.width(), n = h * w;
  std::vector<double> lum(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rgb.channels() == 3)
      lum[i] = 0.2126 * rgb.channel(0)[i] + 0.7152 * rgb.channel(1)[i] +
               0.0722 * rgb.channel(2)[i];
    else
      lum[i] = rgb.channel(0)[i];
  }

  QualityVerdict v;
  v.white_fraction =
      static_cast<double>(std::count_if(lum.begin(), lum.end(), [](double l) { return l > 0.9; })) /
      static_cast<double>(n);
  double grad = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = x + 1 < w ? lum[y * w + x + 1] - lum[y * w + x] : 0.0;
      const double gy = y + 1 < h ? lum[(y + 1) * w + x] - lum[y * w + x] : 0.0;
      grad += std::hypot(gx, gy);
    }
  v.edge_complexity = grad / static_cast<double>(n);
  v.color_spread = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < rgb.channels(); ++c)
    v.color_spread = std::min(v.color_spread, compute_moments(rgb.channel(c)).std);

  if (v.white_fraction > thresholds.max_white_fraction)
    v.reason = RejectReason::WhiteFraction;
  else if (v.edge_complexity < thresholds.min_edge_complexity)
    v.reason = RejectReason::EdgeComplexity;
  else if (v.color_spread < thresholds.min_color_spread)
    v.reason = RejectReason::ColorSpread;
  v.accepted = v.reason == RejectReason::None;
  return v;
}

// ---------------------------------------------------------------------------
// Patch extraction.

void PatchSpec::validate() const {
  if (patch_size < 32) throw InvalidArgument("patch_size must be at least 32");
  if (max_center_attempts < 1) throw InvalidArgument("max_center_attempts must be at least 1");
  if (!(negative_ratio >= 0.0)) throw InvalidArgument("negative_ratio must be non-negative");
}

namespace {

ImageTensor crop(const ImageTensor& image, std::size_t x0, std::size_t y0, std::size_t size) {
  ImageTensor out(image.channels(), size, size, image.color_space());
  for (std::size_t c = 0; c < image.channels(); ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
  return out;
}

void check_extent(const ImageTensor& image, const PatchSpec& spec) {
  spec.validate();
  if (image.width() < spec.patch_size || image.height() < spec.patch_size)
    throw ImageTooSmall("image " + std::to_string(image.width()) + "x" +
                        std::to_string(image.height()) + " is smaller than the patch size " +
                        std::to_string(spec.patch_size));
}

}  // namespace

std::vector<Patch> extract_patches(const ImageTensor& image, std::span<const Point> annotations,
                                   const PatchSpec& spec, Rng& rng) {
  check_extent(image, spec);
  const double p = static_cast<double>(spec.patch_size);
  const auto w = static_cast<double>(image.width()), h = static_cast<double>(image.height());
  std::vector<Patch> out;
  for (const auto& a : annotations) {
    if (!(a.x >= 0.0 && a.x < w && a.y >= 0.0 && a.y < h))
      throw InvalidArgument("annotation outside the image");
    Patch patch;
    bool placed = false;
    for (std::size_t attempt = 1; attempt <= spec.max_center_attempts && !placed; ++attempt) {
      patch.attempts = attempt;
      const double cx = a.x + uniform(rng, -p / 4.0, p / 4.0);
      const double cy = a.y + uniform(rng, -p / 4.0, p / 4.0);
      const double x0 = std::round(cx - p / 2.0), y0 = std::round(cy - p / 2.0);
      if (spec.force_placement_failure || x0 < 0.0 || y0 < 0.0 || x0 + p > w || y0 + p > h)
        continue;
      patch.x0 = static_cast<std::size_t>(x0);
      patch.y0 = static_cast<std::size_t>(y0);
      placed = true;
    }
    if (!placed) {
      patch.corner_fallback = true;
      patch.x0 = a.x < w / 2.0 ? 0 : image.width() - spec.patch_size;
      patch.y0 = a.y < h / 2.0 ? 0 : image.height() - spec.patch_size;
    }
    patch.image = crop(image, patch.x0, patch.y0, spec.patch_size);
    patch.label = 1;
    out.push_back(std::move(patch));
  }
  return out;
}

std::vector<Patch> sample_negatives(const ImageTensor& image, std::span<const Point> annotations,
                                    std::size_t count, const PatchSpec& spec, Rng& rng,
                                    PatchWarnings* warnings) {
  check_extent(image, spec);
  if (count == 0) return {};
  const std::size_t p = spec.patch_size, stride = std::max<std::size_t>(1, p / 8);
  auto positions = [&](std::size_t extent) {
    std::vector<std::size_t> v;
    for (std::size_t x = 0; x + p <= extent; x += stride) v.push_back(x);
    if (v.back() != extent - p) v.push_back(extent - p);
    return v;
  };
  std::vector<std::pair<std::size_t, std::size_t>> feasible;
  for (std::size_t y0 : positions(image.height()))
    for (std::size_t x0 : positions(image.width())) {
      const bool clear = std::none_of(annotations.begin(), annotations.end(), [&](const Point& a) {
        return a.x >= static_cast<double>(x0) && a.x < static_cast<double>(x0 + p) &&
               a.y >= static_cast<double>(y0) && a.y < static_cast<double>(y0 + p);
      });
      if (clear) feasible.emplace_back(x0, y0);
    }
  if (feasible.empty()) {
    if (warnings)
      warnings->messages.push_back("no annotation-free region; no negatives sampled");
    return {};
  }
  const std::size_t take = std::min(count, feasible.size());
  if (take < count && warnings)
    warnings->messages.push_back("only " + std::to_string(take) + " of " +
                                 std::to_string(count) + " negatives available");
  std::vector<Patch> out;
  for (std::size_t i : sample_without_replacement(rng, feasible.size(), take)) {
    Patch patch;
    patch.x0 = feasible[i].first;
    patch.y0 = feasible[i].second;
    patch.label = 0;
    patch.attempts = 1;
    patch.image = crop(image, patch.x0, patch.y0, p);
    out.push_back(std::move(patch));
  }
  return out;
}

std::vector<Point> read_annotations_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Point> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("annotation row without comma: " + line);
    try {
      std::size_t used_x = 0, used_y = 0;
      const std::string xs = line.substr(0, comma), ys = line.substr(comma + 1);
      const double x = std::stod(xs, &used_x), y = std::stod(ys, &used_y);
      if (used_x != xs.size() || used_y != ys.size()) throw std::invalid_argument("trailing");
      out.push_back({x, y});
    } catch (const std::logic_error&) {
      if (!first) throw FormatError("bad annotation row: " + line);
    }
    first = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests.

std::string manifest_to_string(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "format_version " << manifest.format_version << '\n';
  for (const auto& d : manifest.domains) {
    out << "domain " << d.name << '\n';
    for (const auto& e : d.entries) out << e.path << ',' << e.label << '\n';
  }
  return out.str();
}

DatasetManifest manifest_from_string(const std::string& text, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  std::istringstream in(text);
  std::string line;
  bool have_version = false;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError("manifest line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!have_version) {
      if (line.rfind("format_version ", 0) != 0) fail("expected format_version");
      if (line.substr(15) != std::to_string(DatasetManifest::kFormatVersion))
        fail("unsupported format version '" + line.substr(15) + "'");
      m.format_version = DatasetManifest::kFormatVersion;
      have_version = true;
      continue;
    }
    if (line.rfind("domain ", 0) == 0) {
      const std::string name = line.substr(7);
      if (name.empty()) fail("empty domain name");
      for (const auto& d : m.domains)
        if (d.name == name) fail("duplicate domain '" + name + "'");
      m.domains.push_back({name, {}});
      continue;
    }
    if (m.domains.empty()) fail("entry before any domain block");
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) fail("expected 'relative_path,label'");
    const std::string label = line.substr(comma + 1);
    if (label != "0" && label != "1") fail("label must be 0 or 1");
    m.domains.back().entries.push_back({line.substr(0, comma), label == "1" ? 1 : 0});
  }
  if (!have_version) throw FormatError("manifest has no format_version line");
  return m;
}

void write_manifest(const DatasetManifest& manifest) {
  fs::create_directories(manifest.root);
  const fs::path path = manifest.root / kManifestFileName;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_string(manifest);
}

DatasetManifest read_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestFileName : path;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  DatasetManifest m = manifest_from_string(buf.str(), file.parent_path());
  for (const auto& d : m.domains)
    for (const auto& e : d.entries)
      if (!fs::is_regular_file(m.root / e.path))
        throw IoError("manifest references missing file " + (m.root / e.path).string());
  return m;
}

std::vector<ClientDataset> load_manifest(const DatasetManifest& manifest, ColorSpace color_space) {
  std::vector<ClientDataset> out;
  for (const auto& d : manifest.domains) {
    ClientDataset ds;
    ds.client_id = d.name;
    ds.domain = d.name;
    for (const auto& e : d.entries)
      ds.samples.push_back(
          Sample{to_color_space(read_ppm(manifest.root / e.path), color_space), e.label, e.path});
    out.push_back(std::move(ds));
  }
  return out;
}

ClientDataset synthesize_domain(const DomainSpec& spec, std::uint64_t seed,
                                const QualityThresholds& thresholds) {
  spec.validate();
  const auto plans = plan_channels(spec);
  Rng rng(derive_seed(seed, spec.name));
  ClientDataset ds;
  ds.client_id = spec.name;
  ds.domain = spec.name;
  const std::size_t limit = 10 * spec.n_samples + 100;
  for (std::size_t i = 0; ds.size() < spec.n_samples; ++i) {
    if (i >= limit)
      throw InvalidArgument("domain '" + spec.name + "': quality filter rejects too many samples");
    Sample s = generate_sample(spec, plans, i, rng);
    s.image = to_color_space(decode_ppm(encode_ppm(s.image)), ColorSpace::LAB);
    if (quality_filter(s.image, thresholds).accepted) ds.samples.push_back(std::move(s));
  }
  return ds;
}

ChannelStats pooled_channel_stats(std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidArgument("pooled_channel_stats: no samples");
  const std::size_t channels = samples.front().image.channels();
  ChannelStats out;
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<double> all;
    for (const auto& s : samples) {
      if (s.image.channels() != channels) throw ShapeMismatch("mixed channel counts");
      const auto ch = s.image.channel(c);
      all.insert(all.end(), ch.begin(), ch.end());
    }
    const Moments m = compute_moments(all);
    out.mean.push_back(m.mean);
    out.std.push_back(m.std);
    out.skewness.push_back(m.skewness);
    out.kurtosis.push_back(m.kurtosis);
  }
  return out;
}

BuildReport build_synthetic_dataset(std::span<const DomainSpec> specs, const fs::path& out_dir,
                                    std::uint64_t seed, const QualityThresholds& thresholds) {
  if (specs.empty()) throw InvalidArgument("no domain specs");
  for (const auto& s : specs) s.validate();
  DatasetManifest manifest;
  manifest.root = out_dir;
  BuildReport report;
  for (const auto& spec : specs) {
    const ClientDataset ds = synthesize_domain(spec, seed, thresholds);
    fs::create_directories(out_dir / spec.name);
    ManifestDomain md{spec.name, {}};
    DomainBuildSummary summary;
    summary.name = spec.name;
    for (const auto& s : ds.samples) {
      const std::string rel = s.sample_id + ".ppm";
      write_ppm(out_dir / rel, s.image);
      md.entries.push_back({rel, s.label});
      summary.n_label1 += s.label == 1;
    }
    summary.n_samples = ds.size();
    const auto last = ds.samples.back().sample_id;
    summary.rejected = static_cast<std::size_t>(std::stoul(last.substr(last.rfind('/') + 1))) + 1 -
                       ds.size();
    summary.realized = pooled_channel_stats(ds.samples);
    manifest.domains.push_back(std::move(md));
    report.domains.push_back(std::move(summary));
  }
  write_manifest(manifest);
  report.manifest_path = out_dir / kManifestFileName;
  return report;
}

}  // namespace fedstain
