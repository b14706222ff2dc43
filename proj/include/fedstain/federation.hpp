#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedstain/augment.hpp"
#include "fedstain/dataset.hpp"
#include "fedstain/losses.hpp"
#include "fedstain/nn.hpp"
#include "fedstain/stain_stats.hpp"
#include "fedstain/wire.hpp"

namespace fedstain {

enum class FedMode { FedStain, FedAvgBaseline };
std::string_view to_string(FedMode m);
FedMode parse_fed_mode(std::string_view s);

struct FedConfig {
  std::size_t n_round = 3;
  std::size_t n_epochs = 3;
  std::size_t batch_size = 16;
  double stat_ratio = 0.1;
  double dirichlet_alpha = 0.5;
  std::size_t num_clients_per_domain = 2;
  FedMode mode = FedMode::FedStain;
  std::uint64_t master_seed = 0;
  std::size_t num_seeds = 3;
  double lr_start = 1e-4;
  double lr_end = 2.5e-6;
  LrSchedule lr_schedule = LrSchedule::Linear;
  /// Route every message through the byte-level loopback transport.
  bool loopback_transport = false;

  void validate() const;
};

/// Everything a client needs to run local training.
struct TrainSettings {
  FedConfig fed;
  AugmentConfig augment;
  LossWeights loss;
  ModelConfig model;
  ColorSpace color_space = ColorSpace::LAB;
};

struct LossLogRow {
  std::uint32_t round = 0;
  std::string client;
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0.0;
};
using LossLogSink = std::function<void(const LossLogRow&)>;

// ---------------------------------------------------------------------------
// Seed hierarchy and batching; public so reference implementations can
// replay the exact same streams.

std::uint64_t client_seed(std::uint64_t run_seed, std::string_view client_id);
std::uint64_t round_seed(std::uint64_t client_seed, std::uint32_t round);
std::vector<std::size_t> epoch_order(std::uint64_t round_seed, std::size_t epoch, std::size_t n);
/// Batches of `batch_size` over an epoch order; trailing batches with fewer
/// than two samples are dropped (contrastive terms need a pair).
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size);
std::uint64_t steps_per_round(std::size_t n_samples, const FedConfig& cfg);

// ---------------------------------------------------------------------------
// One optimization step on a batch: builds the views, runs all forward
// passes, evaluates the weighted objective and returns its gradients.

struct StepResult {
  LossBreakdown loss;
  Gradients grads;
};

StepResult fedstain_step(const Model& model, const ModelParams& params,
                         std::span<const ImageTensor> images, std::span<const int> labels,
                         const PoolView& view, const TrainSettings& settings, Rng& rng);
StepResult baseline_step(const Model& model, const ModelParams& params,
                         std::span<const ImageTensor> images, std::span<const int> labels);

/// Total loss and gradients given fully built views (pixel-level path).
StepResult objective_and_gradients(const Model& model, const ModelParams& params,
                                   std::span<const ImageTensor> originals,
                                   std::span<const ImageTensor> stain,
                                   std::span<const ImageTensor> view1,
                                   std::span<const ImageTensor> view2,
                                   std::span<const int> labels, const LossWeights& weights,
                                   const FeatureHook& hook = {});

// ---------------------------------------------------------------------------
// Client and server state machines.

enum class ClientPhase { Idle, StatsUploaded, Training, ParamsUploaded };
std::string_view to_string(ClientPhase p);

class Client {
 public:
  Client(ClientDataset data, const TrainSettings& settings, std::uint64_t run_seed);

  const std::string& id() const noexcept { return data_.client_id; }
  std::size_t n_samples() const noexcept { return data_.size(); }
  ClientPhase phase() const noexcept { return phase_; }
  const ClientDataset& dataset() const noexcept { return data_; }
  const PoolView& pool_view() const noexcept { return view_; }
  const OptimizerState& optimizer() const noexcept { return optimizer_; }

  /// Idle -> StatsUploaded.
  RoundMessage upload_statistics(std::uint32_t round);
  /// Accepts this round's PoolGrant; an empty grant falls back to the
  /// client's own uploaded records when allowed.
  void receive_grant(const RoundMessage& grant);
  /// -> Training -> ParamsUploaded. Throws NonFiniteLoss; the client then
  /// returns to Idle and sits the round out.
  RoundMessage train(const RoundMessage& broadcast, const LossLogSink& log = {});
  /// ParamsUploaded -> Idle.
  void finish_round();

 private:
  ClientDataset data_;
  TrainSettings settings_;
  Model model_;
  std::uint64_t seed_;
  ClientPhase phase_ = ClientPhase::Idle;
  std::uint32_t round_ = 0;
  std::vector<StatRecord> own_records_;
  PoolView view_;
  bool has_grant_ = false;
  OptimizerState optimizer_;
  bool optimizer_ready_ = false;
};

struct RosterEntry {
  std::string client_id;
  std::uint64_t n_samples = 0;
};

class Server {
 public:
  Server(ModelParams initial, std::vector<RosterEntry> roster);

  std::uint32_t round() const noexcept { return round_; }
  const ModelParams& global_params() const noexcept { return global_; }
  const StatPool& pool() const noexcept { return pool_; }
  const std::vector<RosterEntry>& roster() const noexcept { return roster_; }

  /// Opens round t+1; clears uploads and failures.
  void begin_round();
  RoundMessage broadcast() const;
  /// Accepts StatUpload / ParamUpload for the current round.
  void receive(const RoundMessage& message);
  /// Builds the pool from this round's statistic uploads and returns one
  /// PoolGrant per roster client, excluding that client's own records.
  std::vector<RoundMessage> grant_pools();
  void mark_failed(const std::string& client_id);
  /// FedAvg over this round's uploads; requires every non-failed client.
  const ModelParams& aggregate();

 private:
  const RosterEntry& find(const std::string& client_id) const;

  ModelParams global_;
  std::vector<RosterEntry> roster_;
  std::uint32_t round_ = 0;
  std::map<std::string, std::vector<StatRecord>> stat_uploads_;
  std::map<std::string, ParamUpload> param_uploads_;
  std::map<std::string, bool> failed_;
  StatPool pool_;
};

/// Sample-weighted mean sum(n_i * theta_i) / sum(n_i), summed in ascending
/// client-id order regardless of upload order.
ModelParams fedavg(std::span<const ParamUpload> uploads);

/// Stage (a): every client uploads, the server pools and grants views.
std::vector<RoundMessage> run_stat_round(Server& server, std::vector<Client>& clients,
                                         LoopbackTransport* transport = nullptr);

/// Stage (b) for one client.
RoundMessage local_train(Client& client, const RoundMessage& broadcast,
                         const LossLogSink& log = {});

// ---------------------------------------------------------------------------
// Data partitioning and experiment drivers.

/// Splits each domain across num_clients_per_domain clients with class
/// proportions drawn from Dirichlet(alpha); clients are named
/// "<domain>/c<k>".
std::vector<ClientDataset> partition_dirichlet(std::span<const ClientDataset> domains,
                                               const FedConfig& cfg, Rng& rng);

struct RoundReport {
  std::uint32_t round = 0;
  std::vector<std::string> dropped_clients;
  std::size_t pool_size = 0;
};

struct TrainingResult {
  ModelParams params;
  std::vector<RoundReport> rounds;
  std::size_t transport_bytes = 0;
  std::vector<std::vector<unsigned char>> frames;  // only with loopback transport
};

/// Full client-server simulation on the given source domains.
TrainingResult run_federated_training(std::span<const ClientDataset> source_domains,
                                      const TrainSettings& settings, std::uint64_t run_seed,
                                      const LossLogSink& log = {});

double evaluate_accuracy(const Model& model, const ModelParams& params,
                         std::span<const Sample> samples);

struct MetricsRow {
  std::string held_out_domain;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double source_accuracy = 0.0;
};

struct MetricsReport {
  FedMode mode = FedMode::FedStain;
  std::vector<MetricsRow> rows;

  std::vector<std::string> domains() const;
  double domain_mean(const std::string& domain) const;
  double domain_std(const std::string& domain) const;
  /// Macro average over held-out domains of their seed means.
  double average() const;
  double source_average() const;
};

struct LodoOptions {
  std::function<void(const std::string& held_out, std::uint64_t seed,
                     const TrainingResult&)> on_run;
  std::function<void(const std::string& held_out, std::uint64_t seed, const LossLogRow&)> log;
};

MetricsReport run_lodo(std::span<const ClientDataset> domains, const TrainSettings& settings,
                       const LodoOptions& options = {});
std::uint64_t lodo_seed(std::uint64_t master_seed, std::size_t repeat);

void write_metrics_csv(std::ostream& out, const MetricsReport& report);
std::string metrics_json(const MetricsReport& report);

/// Worker cap from FEDSTAIN_THREADS (default 1).
std::size_t worker_threads();

}  // namespace fedstain
