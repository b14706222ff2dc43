#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "fedstain/dataset.hpp"
#include "fedstain/error.hpp"
#include "fedstain/stain_stats.hpp"
#include "test_support.hpp"

using namespace fedstain;
using namespace fedstain::testing;

TEST_CASE("moments of {0,0,0,1}") {
  const auto img = image_from({0, 0, 0, 1}, 2, 2, ColorSpace::RGB);
  const auto s = compute_channel_stats(img);
  // Oracle values from oracle_moments: 2/sqrt(3) and 7/3.
  CHECK(s.mean[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s.std[0] == doctest::Approx(std::sqrt(0.1875)).epsilon(1e-14));
  CHECK(s.skewness[0] == doctest::Approx(1.1547005383792515).epsilon(1e-13));
  CHECK(s.kurtosis[0] == doctest::Approx(2.3333333333333335).epsilon(1e-13));
  const std::vector<double> v{0, 0, 0, 1};
  const auto o = oracle_moments(v);
  CHECK(rel_err(s.skewness[0], o.skewness) < 1e-12);
  CHECK(rel_err(s.kurtosis[0], o.kurtosis) < 1e-12);
}

TEST_CASE("symmetric values have zero skewness") {
  const auto img = image_from({-1, 0, 1}, 1, 3);
  CHECK(compute_channel_stats(img).skewness[0] == 0.0);
}

TEST_CASE("moments match the extended-precision oracle on random images") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto h = static_cast<std::size_t>(uniform_int(rng, 1, 64));
    const auto w = static_cast<std::size_t>(uniform_int(rng, 2, 64));
    const auto img = random_image(rng, 3, h, w, ColorSpace::LAB, -50, 50);
    const auto s = compute_channel_stats(img);
    s.validate();
    for (std::size_t c = 0; c < 3; ++c) {
      const auto o = oracle_moments(img.channel(c));
      CHECK(rel_err(s.mean[c], o.mean) < 1e-9);
      CHECK(rel_err(s.std[c], o.std) < 1e-9);
      CHECK(std::fabs(s.skewness[c] - static_cast<double>(o.skewness)) < 1e-9);
      CHECK(rel_err(s.kurtosis[c], o.kurtosis) < 1e-9);
    }
  }
}

TEST_CASE("affine covariance of moments") {
  Rng rng(5);
  const auto x = random_image(rng, 1, 16, 16);
  ImageTensor y = x;
  for (double& v : y.data()) v = 2.5 * v - 7.0;
  const auto sx = compute_channel_stats(x), sy = compute_channel_stats(y);
  CHECK(sy.skewness[0] == doctest::Approx(sx.skewness[0]).epsilon(1e-9));
  CHECK(sy.kurtosis[0] == doctest::Approx(sx.kurtosis[0]).epsilon(1e-9));
  CHECK(sy.mean[0] == doctest::Approx(2.5 * sx.mean[0] - 7.0).epsilon(1e-12));
  CHECK(sy.std[0] == doctest::Approx(2.5 * sx.std[0]).epsilon(1e-12));
}

TEST_CASE("moment inequality holds on random data") {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const auto img = random_image(rng, 1, 4, 4);
    const auto s = compute_channel_stats(img);
    CHECK(s.kurtosis[0] >= s.skewness[0] * s.skewness[0] + 1.0 - 1e-12);
  }
}

TEST_CASE("constant channel policy") {
  ImageTensor img(3, 4, 4, ColorSpace::LAB, 2.0);
  Rng rng(1);
  for (double& v : img.channel(1)) v = standard_normal(rng);
  CHECK_THROWS_AS(compute_channel_stats(img), ConstantChannel);
  StatsWarnings w;
  const auto s = compute_channel_stats(img, ConstantPolicy::Substitute, &w);
  CHECK(w.constant_channels == 2);
  CHECK(s.std[0] == kConstantChannelStd);
  CHECK(s.skewness[0] == 0.0);
  CHECK(s.kurtosis[0] == 3.0);
  CHECK(s.mean[0] == 2.0);
}

TEST_CASE("single-pixel channels are rejected") {
  CHECK_THROWS_AS(compute_channel_stats(ImageTensor(3, 1, 1, ColorSpace::LAB, 0.0)),
                  InvalidArgument);
}

TEST_CASE("stats pairs") {
  std::vector<double> v(10);
  for (int i = 0; i < 10; ++i) v[static_cast<std::size_t>(i)] = i;
  const auto img = image_from(v, 2, 5);

  SUBCASE("mean and IQR of 0..9") {
    const auto p = compute_stats_pair(img, StatKind::MeanAndIQR);
    CHECK(p.shift[0] == doctest::Approx(4.5));
    // Hazen positions: q(0.75) = 7.0, q(0.25) = 2.0.
    CHECK(p.scale[0] == doctest::Approx(5.0).epsilon(1e-14));
  }
  SUBCASE("quantile90 and coefficient of variation") {
    const auto p = compute_stats_pair(img, StatKind::Quantile90AndVariationCoefficient);
    CHECK(p.shift[0] == doctest::Approx(8.5));
    CHECK(p.scale[0] == doctest::Approx(std::sqrt(8.25) / 4.5).epsilon(1e-12));
  }
  SUBCASE("skewness-kurtosis equals channel stats") {
    Rng rng(3);
    const auto r = random_image(rng, 3, 8, 8);
    const auto p = compute_stats_pair(r, StatKind::SkewnessKurtosis);
    const auto s = compute_channel_stats(r);
    CHECK(p.shift == s.skewness);
    CHECK(p.scale == s.kurtosis);
  }
  SUBCASE("mean-std equals channel stats") {
    Rng rng(4);
    const auto r = random_image(rng, 3, 8, 8);
    const auto p = compute_stats_pair(r, StatKind::MeanStd);
    const auto s = compute_channel_stats(r);
    CHECK(p.shift == s.mean);
    CHECK(p.scale == s.std);
  }
  SUBCASE("constant image, mean-std") {
    ImageTensor c(1, 4, 4, ColorSpace::LAB, 3.0);
    CHECK_THROWS_AS(compute_stats_pair(c, StatKind::MeanStd), ConstantChannel);
    StatsPairOptions opt;
    opt.policy = ConstantPolicy::Substitute;
    const auto p = compute_stats_pair(c, StatKind::MeanStd, opt);
    CHECK(p.shift[0] == 3.0);
    CHECK(p.scale[0] == 0.0);
    CHECK(p.constant_flagged);
  }
  SUBCASE("local window larger than image") {
    StatsPairOptions opt;
    opt.local_window = 16;
    CHECK_THROWS_AS(compute_stats_pair(img, StatKind::LocalMeanAndLocalMAD, opt), InvalidWindow);
    opt.local_window = 0;
    CHECK_THROWS_AS(compute_stats_pair(img, StatKind::LocalMeanAndLocalMAD, opt), InvalidWindow);
  }
  SUBCASE("local mean and MAD on tiles") {
    // 4x4 image, window 2: four tiles.
    const auto t = image_from({0, 1, 10, 10, 2, 3, 10, 14, 5, 5, 0, 0, 5, 5, 0, 8}, 4, 4);
    StatsPairOptions opt;
    opt.local_window = 2;
    const auto p = compute_stats_pair(t, StatKind::LocalMeanAndLocalMAD, opt);
    // Tile means 1.5, 11, 5, 2 -> 4.875. Tile MADs: {0,1,2,3} -> 1.0,
    // {10,10,10,14} -> 0, {5,5,5,5} -> 0, {0,0,0,8} -> 0.
    CHECK(p.shift[0] == doctest::Approx(4.875));
    CHECK(p.scale[0] == doctest::Approx(0.25));
  }
}

TEST_CASE("quantile convention") {
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(quantile_sorted(s, 0.5) == doctest::Approx(2.5));
  CHECK(quantile_sorted(s, 0.125) == doctest::Approx(1.0));
  CHECK(quantile_sorted(s, 0.0) == 1.0);
  CHECK(quantile_sorted(s, 1.0) == 4.0);
  CHECK(quantile_sorted(s, 0.25) == doctest::Approx(1.5));
}

namespace {

ClientDataset make_dataset(const std::string& id, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ClientDataset d;
  d.client_id = id;
  d.domain = id;
  for (std::size_t i = 0; i < n; ++i)
    d.samples.push_back({random_image(rng, 3, 8, 8), static_cast<int>(i % 2),
                         id + "/" + std::to_string(i)});
  return d;
}

}  // namespace

TEST_CASE("upload counts") {
  CHECK(upload_count(25, 0.1) == 3);
  CHECK(upload_count(10, 0.1) == 1);
  CHECK(upload_count(7, 0.1) == 1);
  CHECK(upload_count(10, 1.0) == 10);
  CHECK(upload_count(30, 0.1) == 3);
}

TEST_CASE("sample_statistics") {
  const auto d25 = make_dataset("a", 25, 1);
  Rng rng(2);
  CHECK(sample_statistics(d25, 0.1, rng).size() == 3);

  const auto d10 = make_dataset("b", 10, 2);
  Rng rng2(3);
  const auto all = sample_statistics(d10, 1.0, rng2);
  std::vector<std::string> ids;
  for (const auto& r : all) ids.push_back(r.sample_id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  CHECK(ids.size() == 10);

  const auto d7 = make_dataset("c", 7, 3);
  Rng r1(42), r2(42);
  CHECK(sample_statistics(d7, 0.1, r1) == sample_statistics(d7, 0.1, r2));
  for (const auto& r : all) CHECK(r.client_id == "b");
}

TEST_CASE("pool and exclusion views") {
  std::map<std::string, std::vector<StatRecord>> uploads;
  for (const char* id : {"c1", "c2", "c3"}) {
    const auto d = make_dataset(id, 20, std::hash<std::string>{}(id));
    Rng rng(7);
    uploads[id] = sample_statistics(d, 0.1, rng);
  }
  const auto pool = build_pool(uploads, 1);
  CHECK(pool.records.size() == 6);
  for (const auto& [id, recs] : uploads) {
    const auto view = pool_view(pool, id);
    CHECK(view.size() == 4);
    for (const auto& e : view.entries()) CHECK(e.client_id != id);
    CHECK(view.size() + recs.size() == pool.records.size());
  }
  CHECK_THROWS_AS(pool_view(pool, "nobody"), UnknownClient);

  std::map<std::string, std::vector<StatRecord>> single{{"solo", uploads["c1"]}};
  for (auto& r : single["solo"]) r.client_id = "solo";
  const auto p1 = build_pool(single);
  const auto v1 = pool_view(p1, "solo");
  CHECK(v1.empty());
  CHECK(v1.with_fallback(single["solo"]).size() == 2);
}

TEST_CASE("distribution diagnostics") {
  SUBCASE("gaussian") {
    Rng rng(8);
    std::vector<double> v(100000);
    for (double& x : v) x = standard_normal(rng);
    const auto d = analyze_distribution(v, 50);
    CHECK(std::fabs(d.skewness) < 0.05);
    double integral = 0.0;
    for (std::size_t i = 0; i < d.densities.size(); ++i)
      integral += d.densities[i] * (d.bin_edges[i + 1] - d.bin_edges[i]);
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
    for (std::size_t k = 1; k < d.qq_points.size(); ++k) {
      CHECK(d.qq_points[k].first >= d.qq_points[k - 1].first);
      CHECK(d.qq_points[k].second >= d.qq_points[k - 1].second);
    }
    // Central qq points hug the diagonal.
    const auto& mid = d.qq_points[v.size() / 2];
    CHECK(std::fabs(mid.first - mid.second) < 0.05);
  }
  SUBCASE("exponential") {
    std::mt19937_64 eng(10);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> v(1000000);
    for (double& x : v) x = e(eng);
    const auto d = analyze_distribution(v, 100);
    CHECK(d.skewness == doctest::Approx(2.0).epsilon(0.025));
    CHECK(std::fabs(d.excess_kurtosis - 6.0) < 0.3);
  }
  SUBCASE("errors") {
    std::vector<double> few(31, 1.0);
    few[0] = 2.0;
    CHECK_THROWS_AS(analyze_distribution(few, 10), InvalidArgument);
    std::vector<double> flat(64, 1.0);
    CHECK_THROWS_AS(analyze_distribution(flat, 10), DegenerateInput);
  }
}

TEST_CASE("record serialization round trip") {
  const auto d = make_dataset("client-x", 5, 4);
  Rng rng(1);
  SampleStatsOptions opts;
  opts.kind = StatKind::MeanAndIQR;
  const auto recs = sample_statistics(d, 1.0, rng, opts);
  CHECK(recs.front().extra_pair.has_value());
  std::stringstream ss;
  write_stat_records(ss, recs, 3);
  const auto back = read_stat_records(ss);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(back[i] == recs[i]);

  std::uint64_t round = 0;
  const auto line = stat_record_to_line(recs[0], 9);
  CHECK(stat_record_from_line(line, &round) == recs[0]);
  CHECK(round == 9);
  CHECK_THROWS(stat_record_from_line(R"({"round":1,"bogus":2})"));
}

TEST_CASE("normal quantile") {
  CHECK(standard_normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(standard_normal_quantile(0.975) == doctest::Approx(1.959963984540054));
}
