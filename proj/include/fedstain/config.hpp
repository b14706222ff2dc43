#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedstain/augment.hpp"
#include "fedstain/data_pipeline.hpp"
#include "fedstain/federation.hpp"
#include "fedstain/losses.hpp"
#include "fedstain/nn.hpp"

namespace fedstain {

struct DataConfig {
  /// Existing manifest to train on; empty means "use the generator specs".
  std::string manifest;
  std::vector<DomainSpec> domains = default_domain_specs();
  QualityThresholds quality;
  ColorSpace color_space = ColorSpace::LAB;
};

struct AblationConfig {
  std::vector<StatKind> kinds{std::begin(kAllStatKinds), std::end(kAllStatKinds)};
};

/// Everything a command needs. JSON with sections fed, augment, loss,
/// model, data, ablation; every section and key is optional and unknown
/// keys are rejected.
struct RunConfig {
  FedConfig fed;
  AugmentConfig augment;
  LossWeights loss;
  ModelConfig model;
  DataConfig data;
  AblationConfig ablation;

  void validate() const;
  TrainSettings train_settings() const;
};

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace fedstain
