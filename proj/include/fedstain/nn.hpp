#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedstain/image.hpp"
#include "fedstain/rng.hpp"

namespace fedstain {

using Matrix = Eigen::MatrixXd;

/// Encoder h: three stride-2 3x3 conv + ReLU blocks, global average pool and
/// a linear projection to the embedding. Classifier g: linear head.
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t input_size = 32;
  std::vector<std::size_t> conv_channels = {8, 16, 64};
  std::size_t embed_dim = 64;
  std::size_t num_classes = 2;
  /// Fixed input normalization (x - offset[c]) * scale; tuned for LAB.
  std::vector<double> input_offset = {50.0, 0.0, 0.0};
  double input_scale = 0.05;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerShape {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t size() const;
};

struct ModelLayout {
  std::vector<LayerShape> encoder;
  std::vector<LayerShape> classifier;

  std::size_t encoder_size() const;
  std::size_t classifier_size() const;
  std::string describe() const;
  std::uint64_t hash() const;
  bool operator==(const ModelLayout& o) const { return describe() == o.describe(); }
};

ModelLayout make_layout(const ModelConfig& cfg);

/// Flat parameter vectors for h and g; the unit of FedAvg aggregation.
struct ModelParams {
  std::vector<double> encoder;
  std::vector<double> classifier;
  ModelLayout layout;

  std::size_t size() const noexcept { return encoder.size() + classifier.size(); }
  bool all_finite() const noexcept;
  bool operator==(const ModelParams& o) const {
    return encoder == o.encoder && classifier == o.classifier;
  }
};

struct Gradients {
  std::vector<double> encoder;
  std::vector<double> classifier;
};

struct Embedding {
  std::vector<double> vector;
  double l2_norm = 0.0;
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
};

/// Optional per-sample transform of the first block's activations (feature
/// level MixStyle). Receives one sample's channel-major block in place and
/// returns the per-channel gain to apply on the backward pass; an empty
/// vector means the sample was left untouched.
using FeatureHook =
    std::function<std::vector<double>(std::size_t sample, std::span<double> block,
                                      std::size_t channels)>;

/// Activations kept for the backward pass. Embeddings are columns of
/// `embeddings` (embed_dim x B); logits/probs are num_classes x B.
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<Matrix> cols;         // im2col input of each conv layer
  std::vector<Matrix> activations;  // post-ReLU output of each conv layer
  std::vector<std::vector<double>> hook_gains;  // [sample][channel], first block
  Matrix pooled;
  Matrix embeddings;
  Matrix logits;
  Matrix probs;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ModelLayout& layout() const noexcept { return layout_; }

  ModelParams init_params(Rng& rng) const;
  ModelParams zeros() const;

  ForwardCache forward(const ModelParams& params, std::span<const ImageTensor> batch,
                       const FeatureHook& hook = {}) const;
  /// Reverse pass from upstream gradients w.r.t. embeddings and logits (both
  /// may be empty matrices meaning zero).
  Gradients backward(const ModelParams& params, const ForwardCache& cache,
                     const Matrix& grad_embeddings, const Matrix& grad_logits) const;

  std::vector<int> predict(const ModelParams& params, std::span<const ImageTensor> batch,
                           std::size_t chunk = 256) const;

 private:
  void check_params(const ModelParams& params) const;

  ModelConfig cfg_;
  ModelLayout layout_;
  std::vector<std::size_t> spatial_;  // output side length of each conv layer
};

std::vector<Embedding> to_embeddings(const Matrix& embeddings);
std::vector<Prediction> to_predictions(const Matrix& logits, const Matrix& probs);
Matrix softmax_columns(const Matrix& logits);

// ---------------------------------------------------------------------------
// Optimizer.

enum class LrSchedule { Linear, Cosine };
std::string_view to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view s);

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
  std::uint64_t total_steps = 1;
  double lr_start = 1e-4;
  double lr_end = 2.5e-6;
  LrSchedule schedule = LrSchedule::Linear;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimizerState make_optimizer(const ModelParams& params, double lr_start, double lr_end,
                              LrSchedule schedule, std::uint64_t total_steps);
double lr_at(const OptimizerState& state, std::uint64_t step, std::uint64_t total_steps);
/// One bias-corrected Adam update at lr_at(step_count); returns the lr used.
double adam_step(OptimizerState& state, ModelParams& params, const Gradients& grads);

// ---------------------------------------------------------------------------
// Checkpoints: "FSTNCKPT", u32 version, u64 layout hash, u64 encoder count,
// u64 classifier count, then little-endian float64 payload.

std::vector<unsigned char> encode_params(const ModelParams& params);
ModelParams decode_params(std::span<const unsigned char> bytes, const ModelLayout& expected);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelLayout& expected);

}  // namespace fedstain
