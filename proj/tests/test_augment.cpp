#include <doctest.h>

#include <cmath>

#include "fedstain/augment.hpp"
#include "fedstain/error.hpp"
#include "test_support.hpp"

using namespace fedstain;
using namespace fedstain::testing;

namespace {

PoolView::Entry entry(std::vector<double> mean, std::vector<double> std, std::vector<double> skew,
                      std::vector<double> kurt, ColorSpace cs = ColorSpace::LAB) {
  PoolView::Entry e;
  e.client_id = "other";
  e.sample_id = "s";
  e.color_space = cs;
  e.stats = ChannelStats{std::move(mean), std::move(std), std::move(skew), std::move(kurt)};
  return e;
}

PoolView random_view(Rng& rng, std::size_t channels, std::size_t n) {
  std::vector<PoolView::Entry> es;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> m(channels), s(channels), sk(channels), k(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      m[c] = uniform(rng, -20, 80);
      s[c] = uniform(rng, 0.5, 15);
      sk[c] = uniform(rng, -1.5, 1.5);
      k[c] = sk[c] * sk[c] + 1.0 + uniform(rng, 0.2, 4.0);
    }
    es.push_back(entry(m, s, sk, k));
  }
  return PoolView(std::move(es));
}

}  // namespace

TEST_CASE("randstain three-pixel oracle") {
  const auto img = image_from({0.0, 0.5, 1.0}, 1, 3);
  const std::vector<double> mu{0.3}, sd{0.1};
  const auto out = randstain_with_targets(img, mu, sd, false);
  // x' = (x - 0.5) / sqrt(1/6) * 0.1 + 0.3
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.17752551286084110).epsilon(1e-12));
  CHECK(out.at(0, 0, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(out.at(0, 0, 2) == doctest::Approx(0.42247448713915890).epsilon(1e-12));
  const auto s = compute_channel_stats(out);
  CHECK(s.mean[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(s.std[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("randstain literal form omits the division by sigma") {
  const auto img = image_from({0.0, 0.5, 1.0}, 1, 3);
  const std::vector<double> mu{0.3}, sd{0.1};
  const auto out = randstain_with_targets(img, mu, sd, true);
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.25));
  CHECK(out.at(0, 0, 2) == doctest::Approx(0.35));
}

TEST_CASE("randstain degenerate and identity targets") {
  Rng rng(1);
  ImageTensor img = random_image(rng, 3, 8, 8);
  for (double& v : img.channel(1)) v = 4.0;
  const std::vector<double> mu{1, 2, 3}, sd{0.5, 0.7, 0.9};
  const auto out = randstain_with_targets(img, mu, sd, false);
  for (double v : out.channel(1)) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));

  const auto src = random_image(rng, 3, 8, 8);
  const auto s = compute_channel_stats(src);
  const auto same = randstain_with_targets(src, s.mean, s.std, false);
  for (std::size_t i = 0; i < src.size(); ++i)
    CHECK(std::fabs(same.data()[i] - src.data()[i]) < 1e-6);
}

TEST_CASE("randstain probability and pool draw") {
  Rng rng(2);
  const auto img = random_image(rng, 3, 8, 8);
  const auto view = random_view(rng, 3, 5);
  AugmentConfig cfg;
  cfg.randstain_prob = 0.0;
  CHECK(randstain(img, view, cfg, rng) == img);
  cfg.randstain_prob = 1.0;
  for (int t = 0; t < 50; ++t) {
    const auto out = randstain(img, view, cfg, rng);
    const auto s = compute_channel_stats(out);
    bool matched = false;
    for (const auto& e : view.entries()) {
      bool all = true;
      for (std::size_t c = 0; c < 3; ++c)
        all = all && std::fabs(s.mean[c] - e.stats.mean[c]) < 1e-6 &&
              std::fabs(s.std[c] - e.stats.std[c]) < 1e-6;
      matched = matched || all;
    }
    CHECK(matched);
  }
  CHECK_THROWS_AS(randstain(img, PoolView{}, cfg, rng), EmptyPool);
}

TEST_CASE("randstain rejects mismatched pools") {
  Rng rng(3);
  const auto img = random_image(rng, 3, 8, 8);
  AugmentConfig cfg;
  cfg.randstain_prob = 1.0;
  PoolView rgb({entry({1, 1, 1}, {1, 1, 1}, {0, 0, 0}, {3, 3, 3}, ColorSpace::RGB)});
  CHECK_THROWS_AS(randstain(img, rgb, cfg, rng), InvalidArgument);
  PoolView one({entry({1}, {1}, {0}, {3})});
  CHECK_THROWS_AS(randstain(img, one, cfg, rng), ShapeMismatch);
}

TEST_CASE("mixstyle three-pixel oracle") {
  const auto img = image_from({-1.0, 0.0, 1.0}, 1, 3);
  PoolView view({entry({0}, {1}, {0.5}, {2.0})});
  AugmentConfig cfg;
  cfg.force_lambda = 0.5;
  Rng rng(4);
  MixStyleTrace trace;
  const auto out = mixstyle_sample(img, view, cfg, rng, &trace);
  CHECK(trace.beta_mix[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(trace.gamma_mix[0] == doctest::Approx(1.75).epsilon(1e-15));
  // 1.75 * x / sqrt(2/3) + 0.25
  CHECK(out.at(0, 0, 0) == doctest::Approx(-1.8933035249352808).epsilon(1e-12));
  CHECK(out.at(0, 0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(out.at(0, 0, 2) == doctest::Approx(2.3933035249352808).epsilon(1e-12));
  CHECK(compute_channel_stats(img).kurtosis[0] == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("mixstyle with lambda 1 takes the pool statistics") {
  Rng rng(5);
  const auto img = random_image(rng, 3, 8, 8);
  const auto view = random_view(rng, 3, 1);
  AugmentConfig cfg;
  cfg.force_lambda = 1.0;
  const auto out = mixstyle_sample(img, view, cfg, rng);
  const auto s = compute_channel_stats(out);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::fabs(s.mean[c] - view[0].stats.skewness[c]) < 1e-9);
    CHECK(std::fabs(s.std[c] - std::fabs(view[0].stats.kurtosis[c])) < 1e-9);
  }
}

TEST_CASE("mixstyle fixed point of the mix") {
  Rng rng(6);
  const auto img = random_image(rng, 3, 8, 8);
  const auto s = compute_channel_stats(img);
  PoolView view({entry(s.mean, s.std, s.skewness, s.kurtosis)});
  AugmentConfig cfg;
  std::vector<double> first;
  for (double lambda : {0.0, 0.3, 0.9}) {
    cfg.force_lambda = lambda;
    const auto out = compute_channel_stats(mixstyle_sample(img, view, cfg, rng));
    if (first.empty()) first = out.mean;
    for (std::size_t c = 0; c < 3; ++c) CHECK(out.mean[c] == doctest::Approx(first[c]));
  }
}

TEST_CASE("mixstyle post statistics over random trials") {
  Rng rng(7);
  AugmentConfig cfg;
  for (int t = 0; t < 200; ++t) {
    const auto img = random_image(rng, 3, 8, 8);
    const auto view = random_view(rng, 3, 4);
    MixStyleTrace tr;
    const auto s = compute_channel_stats(mixstyle_sample(img, view, cfg, rng, &tr));
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::fabs(s.mean[c] - tr.beta_mix[c]) < 1e-6);
      CHECK(std::fabs(s.std[c] - std::fabs(tr.gamma_mix[c])) < 1e-6);
    }
  }
}

TEST_CASE("mixstyle over ablation kinds uses the extra pair") {
  Rng rng(8);
  const auto img = random_image(rng, 3, 16, 16);
  auto e = entry({0, 0, 0}, {1, 1, 1}, {0, 0, 0}, {3, 3, 3});
  e.extra_pair = GenericStatsPair{StatKind::MeanAndIQR, {1, 2, 3}, {4, 5, 6}, false};
  PoolView view({e});
  AugmentConfig cfg;
  cfg.stat_kind = StatKind::MeanAndIQR;
  cfg.force_lambda = 1.0;
  MixStyleTrace tr;
  mixstyle_sample(img, view, cfg, rng, &tr);
  CHECK(tr.beta_mix == std::vector<double>{1, 2, 3});
  CHECK(tr.gamma_mix == std::vector<double>{4, 5, 6});
}

TEST_CASE("augmix") {
  Rng rng(9);
  const auto img = random_image(rng, 3, 16, 16);
  AugmentConfig cfg;

  SUBCASE("skip weight 0 returns the input") {
    cfg.force_skip_weight = 0.0;
    CHECK(augmix(img, cfg, rng) == img);
  }
  SUBCASE("flip twice is an involution") {
    cfg.augmix_chains = 1;
    cfg.augmix_depth_min = cfg.augmix_depth_max = 2;
    cfg.augmix_ops = {AugOp::HorizontalFlip};
    cfg.force_skip_weight = 1.0;
    const auto out = augmix(img, cfg, rng);
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(out.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-15));
  }
  SUBCASE("determinism and shape") {
    Rng a(77), b(77);
    const auto x = augmix(img, cfg, a), y = augmix(img, cfg, b);
    CHECK(x == y);
    CHECK(x.same_shape(img));
  }
  SUBCASE("every op preserves shape and finiteness") {
    for (AugOp op : {AugOp::Identity, AugOp::HorizontalFlip, AugOp::VerticalFlip, AugOp::Rotate90,
                     AugOp::SmallRotate, AugOp::Scale, AugOp::Translate}) {
      const auto out = apply_aug_op(img, op, rng);
      CHECK(out.same_shape(img));
      CHECK(out.all_finite());
    }
  }
  SUBCASE("rotate90 four times is the identity") {
    ImageTensor x = img;
    for (int k = 0; k < 4; ++k) x = apply_aug_op(x, AugOp::Rotate90, rng);
    CHECK(x == img);
  }
  SUBCASE("invalid config") {
    cfg.augmix_depth_min = 3;
    cfg.augmix_depth_max = 2;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = AugmentConfig{};
    cfg.augmix_ops.clear();
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  }
}

TEST_CASE("make_views") {
  Rng rng(10);
  const auto img = random_image(rng, 3, 16, 16);
  const auto view = random_view(rng, 3, 6);
  AugmentConfig cfg;

  SUBCASE("reproducible") {
    Rng a(5), b(5);
    const auto x = make_views(img, view, cfg, a), y = make_views(img, view, cfg, b);
    CHECK(x.stain == y.stain);
    CHECK(x.view1 == y.view1);
    CHECK(x.view2 == y.view2);
  }
  SUBCASE("independent views") {
    int differ = 0;
    for (int t = 0; t < 100; ++t) {
      const auto v = make_views(img, view, cfg, rng);
      differ += !(v.view1 == v.view2);
      CHECK(v.stain.same_shape(img));
      CHECK(v.view1.same_shape(img));
    }
    CHECK(differ == 100);
  }
  SUBCASE("null pipeline") {
    const auto s = compute_channel_stats(img);
    PoolView own({entry(s.mean, s.std, s.skewness, s.kurtosis)});
    cfg.randstain_prob = 0.0;
    cfg.augmix_ops = {AugOp::Identity};
    cfg.force_lambda = 0.0;
    cfg.stat_kind = StatKind::MeanStd;
    const auto v = make_views(img, own, cfg, rng);
    CHECK(v.stain == img);
    for (std::size_t i = 0; i < img.size(); ++i) {
      CHECK(v.view1.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-12));
      CHECK(v.view2.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-12));
    }
  }
  SUBCASE("feature level leaves mixstyle to the encoder") {
    cfg.mixstyle_level = MixStyleLevel::Feature;
    cfg.force_skip_weight = 0.0;
    const auto v = make_views(img, view, cfg, rng);
    CHECK(v.view1 == img);
    CHECK(v.view2 == img);
  }
}

TEST_CASE("feature-level block mixing") {
  Rng rng(11);
  std::vector<double> block(2 * 16);
  for (double& v : block) v = uniform(rng, 0, 3);
  PoolView view({entry({0, 0, 0}, {1, 1, 1}, {0.5, -0.5, 0.1}, {2.0, 4.0, 3.0})});
  AugmentConfig cfg;
  cfg.force_lambda = 1.0;
  const std::vector<double> before = block;
  const auto gains = mixstyle_feature_block(block, 2, view, cfg, rng);
  REQUIRE(gains.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto m = compute_moments(std::span<const double>(block).subspan(c * 16, 16));
    const auto m0 = compute_moments(std::span<const double>(before).subspan(c * 16, 16));
    CHECK(m.mean == doctest::Approx(view[0].stats.skewness[c]));
    CHECK(m.std == doctest::Approx(view[0].stats.kurtosis[c]));
    CHECK(gains[c] == doctest::Approx(view[0].stats.kurtosis[c] / m0.std));
  }
  std::vector<double> flat(16, 1.0);
  CHECK(mixstyle_feature_block(flat, 1, view, cfg, rng)[0] == 0.0);
  cfg.stat_kind = StatKind::MeanAndIQR;
  CHECK_THROWS_AS(mixstyle_feature_block(block, 2, view, cfg, rng), InvalidArgument);
}
