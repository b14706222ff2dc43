#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fedstain/config.hpp"
#include "fedstain/error.hpp"

using namespace fedstain;

TEST_CASE("config round trip") {
  RunConfig cfg;
  cfg.fed.n_round = 7;
  cfg.fed.mode = FedMode::FedAvgBaseline;
  cfg.fed.lr_schedule = LrSchedule::Cosine;
  cfg.augment.stat_kind = StatKind::MeanAndIQR;
  cfg.augment.mixstyle_level = MixStyleLevel::Feature;
  cfg.augment.force_lambda = 0.25;
  cfg.augment.augmix_ops = {AugOp::Rotate90, AugOp::Translate};
  cfg.loss.alpha = 0.3;
  cfg.loss.cls_loss = ClsLoss::SupConSelf;
  cfg.model.conv_channels = {4, 8, 16};
  cfg.data.domains = default_domain_specs(50, 32);
  cfg.data.domains[1].targets[0].inverted = false;
  cfg.data.quality.min_edge_complexity = 0.0;
  cfg.data.color_space = ColorSpace::RGB;
  cfg.ablation.kinds = {StatKind::MeanStd, StatKind::SkewnessKurtosis};

  const auto text = config_to_json(cfg);
  const auto back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.fed.n_round == 7);
  CHECK(back.fed.mode == FedMode::FedAvgBaseline);
  CHECK(back.augment.force_lambda == 0.25);
  CHECK(!back.augment.force_skip_weight);
  CHECK(back.model == cfg.model);
  CHECK(back.data.domains[0].n_samples == 50);
  CHECK(back.ablation.kinds == cfg.ablation.kinds);
}

TEST_CASE("partial configs keep defaults") {
  const auto cfg = config_from_json(R"({"fed": {"n_round": 4}, "loss": {"beta": 0.5}})");
  CHECK(cfg.fed.n_round == 4);
  CHECK(cfg.fed.n_epochs == FedConfig{}.n_epochs);
  CHECK(cfg.loss.beta == 0.5);
  CHECK(cfg.loss.alpha == 1.0);
  CHECK(cfg.data.domains.size() == 3);
  CHECK(config_from_json("{}").fed.lr_start == 1e-4);
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(config_from_json(R"({"fed": {"n_rounds": 4}})"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(R"({"feds": {}})"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(R"({"fed": {"n_round": "x"}})"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(R"({"fed": {"n_round": 0}})"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(R"({"augment": {"stat_kind": "median"}})"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(R"({"loss": {"tau": -1}})"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json("{not json"), InvalidArgument);
  CHECK_THROWS_AS(config_from_json("[]"), InvalidArgument);
  CHECK_THROWS_AS(load_config("/nonexistent/fedstain.json"), IoError);
}

TEST_CASE("load_config reads files") {
  const auto path = std::filesystem::temp_directory_path() / "fedstain_cfg_test.json";
  std::ofstream(path) << R"({"fed": {"master_seed": 99}})";
  CHECK(load_config(path).fed.master_seed == 99);
  std::filesystem::remove(path);
}

TEST_CASE("train settings mirror the sections") {
  RunConfig cfg;
  cfg.fed.batch_size = 5;
  cfg.loss.tau = 0.2;
  cfg.data.color_space = ColorSpace::RGB;
  cfg.model.input_offset = {0.5, 0.5, 0.5};
  const auto s = cfg.train_settings();
  CHECK(s.fed.batch_size == 5);
  CHECK(s.loss.tau == 0.2);
  CHECK(s.color_space == ColorSpace::RGB);
}
