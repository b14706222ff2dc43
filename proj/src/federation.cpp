#include "fedstain/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <thread>

#include "fedstain/error.hpp"

namespace fedstain {

std::string_view to_string(FedMode m) {
  return m == FedMode::FedStain ? "fedstain" : "fedavg_baseline";
}

FedMode parse_fed_mode(std::string_view s) {
  if (s == "fedstain") return FedMode::FedStain;
  if (s == "fedavg_baseline") return FedMode::FedAvgBaseline;
  throw InvalidArgument("unknown mode '" + std::string(s) + "'");
}

void FedConfig::validate() const {
  if (n_round == 0) throw InvalidArgument("n_round must be positive");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(stat_ratio > 0.0 && stat_ratio <= 1.0))
    throw InvalidArgument("stat_ratio must lie in (0, 1]");
  if (!(dirichlet_alpha > 0.0) || !std::isfinite(dirichlet_alpha))
    throw InvalidArgument("dirichlet_alpha must be positive");
  if (num_clients_per_domain == 0)
    throw InvalidArgument("num_clients_per_domain must be positive");
  if (num_seeds == 0) throw InvalidArgument("num_seeds must be positive");
  if (!(lr_start > 0.0) || !(lr_end >= 0.0)) throw InvalidArgument("invalid learning rate");
}

std::string_view to_string(ClientPhase p) {
  switch (p) {
    case ClientPhase::Idle: return "Idle";
    case ClientPhase::StatsUploaded: return "StatsUploaded";
    case ClientPhase::Training: return "Training";
    case ClientPhase::ParamsUploaded: return "ParamsUploaded";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Seeds and batching.

std::uint64_t client_seed(std::uint64_t run_seed, std::string_view client_id) {
  return derive_seed(derive_seed(run_seed, "client"), client_id);
}

std::uint64_t round_seed(std::uint64_t client_seed, std::uint32_t round) {
  return derive_seed(client_seed, static_cast<std::uint64_t>(round));
}

std::vector<std::size_t> epoch_order(std::uint64_t round_seed, std::size_t epoch, std::size_t n) {
  Rng rng(derive_seed(derive_seed(round_seed, "epoch"), static_cast<std::uint64_t>(epoch)));
  return sample_without_replacement(rng, n, n);
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (end - i < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::uint64_t steps_per_round(std::size_t n_samples, const FedConfig& cfg) {
  std::uint64_t per_epoch = n_samples / cfg.batch_size;
  if (n_samples % cfg.batch_size >= 2) ++per_epoch;
  return per_epoch * cfg.n_epochs;
}

// ---------------------------------------------------------------------------
// Objective.

namespace {

Matrix block(const Matrix& m, std::size_t k, std::size_t b) {
  return m.middleCols(static_cast<Eigen::Index>(k * b), static_cast<Eigen::Index>(b));
}

double classification_loss(const Matrix& z, const Matrix& logits, std::span<const int> labels,
                           const LossWeights& w, Matrix& grad_z, Matrix& grad_logits) {
  if (w.cls_loss == ClsLoss::CrossEntropy) return cross_entropy(logits, labels, &grad_logits);
  Matrix ga, gb;
  double value = 0.0;
  try {
    value = supcon(z, z, labels, w.tau, &ga, &gb);
  } catch (const NoPositives&) {
    return 0.0;
  }
  grad_z += ga + gb;
  return value;
}

}  // namespace

StepResult objective_and_gradients(const Model& model, const ModelParams& params,
                                   std::span<const ImageTensor> originals,
                                   std::span<const ImageTensor> stain,
                                   std::span<const ImageTensor> view1,
                                   std::span<const ImageTensor> view2,
                                   std::span<const int> labels, const LossWeights& weights,
                                   const FeatureHook& hook) {
  const std::size_t b = originals.size();
  if (b == 0 || stain.size() != b || view1.size() != b || view2.size() != b ||
      labels.size() != b)
    throw ShapeMismatch("objective: view batches must match the label count");

  std::vector<ImageTensor> all;
  all.reserve(4 * b);
  for (auto part : {originals, stain, view1, view2}) all.insert(all.end(), part.begin(), part.end());
  const ForwardCache cache = model.forward(params, all, hook);

  const auto d = cache.embeddings.rows();
  const auto k = cache.logits.rows();
  const auto bi = static_cast<Eigen::Index>(b);
  const Matrix z = block(cache.embeddings, 0, b), zs = block(cache.embeddings, 1, b);
  const Matrix z1 = block(cache.embeddings, 2, b), z2 = block(cache.embeddings, 3, b);
  std::vector<Matrix> logits;
  for (std::size_t v = 0; v < 4; ++v) logits.push_back(block(cache.logits, v, b));

  Matrix g_cls_z = Matrix::Zero(d, bi), g_cls_logits = Matrix::Zero(k, bi);
  const double cls = classification_loss(z, logits[0], labels, weights, g_cls_z, g_cls_logits);

  Matrix gz, gs, g1, g2;
  double ra = 0.0;
  try {
    ra = representation_alignment(z, zs, z1, z2, labels, weights.tau, &gz, &gs, &g1, &g2);
  } catch (const NoPositives&) {
    ra = 0.0;
    gz = gs = g1 = g2 = Matrix::Zero(d, bi);
  }

  std::vector<Matrix> gjs;
  const double js = js_alignment(logits, &gjs);

  StepResult result;
  result.loss = total_loss(cls, ra, js, weights);

  Matrix grad_emb(d, 4 * bi), grad_logits(k, 4 * bi);
  grad_emb.middleCols(0, bi) = g_cls_z + weights.alpha * gz;
  grad_emb.middleCols(bi, bi) = weights.alpha * gs;
  grad_emb.middleCols(2 * bi, bi) = weights.alpha * g1;
  grad_emb.middleCols(3 * bi, bi) = weights.alpha * g2;
  for (Eigen::Index v = 0; v < 4; ++v)
    grad_logits.middleCols(v * bi, bi) = weights.beta * gjs[static_cast<std::size_t>(v)];
  grad_logits.middleCols(0, bi) += g_cls_logits;

  result.grads = model.backward(params, cache, grad_emb, grad_logits);
  return result;
}

StepResult fedstain_step(const Model& model, const ModelParams& params,
                         std::span<const ImageTensor> images, std::span<const int> labels,
                         const PoolView& view, const TrainSettings& settings, Rng& rng) {
  const std::size_t b = images.size();
  std::vector<ImageTensor> stain, v1, v2;
  stain.reserve(b);
  v1.reserve(b);
  v2.reserve(b);
  for (const auto& x : images) {
    AugmentedViews views = make_views(x, view, settings.augment, rng);
    stain.push_back(std::move(views.stain));
    v1.push_back(std::move(views.view1));
    v2.push_back(std::move(views.view2));
  }

  FeatureHook hook;
  Rng hook_rng(rng());
  if (settings.augment.mixstyle_level == MixStyleLevel::Feature) {
    hook = [&](std::size_t sample, std::span<double> blk, std::size_t channels) {
      if (sample < 2 * b) return std::vector<double>{};
      return mixstyle_feature_block(blk, channels, view, settings.augment, hook_rng);
    };
  }
  return objective_and_gradients(model, params, images, stain, v1, v2, labels, settings.loss,
                                 hook);
}

StepResult baseline_step(const Model& model, const ModelParams& params,
                         std::span<const ImageTensor> images, std::span<const int> labels) {
  const ForwardCache cache = model.forward(params, images);
  StepResult result;
  Matrix grad_logits;
  const double cls = cross_entropy(cache.logits, labels, &grad_logits);
  result.loss = total_loss(cls, 0.0, 0.0, LossWeights{});
  result.grads = model.backward(params, cache, Matrix(), grad_logits);
  return result;
}

// ---------------------------------------------------------------------------
// Client.

Client::Client(ClientDataset data, const TrainSettings& settings, std::uint64_t run_seed)
    : data_(std::move(data)),
      settings_(settings),
      model_(settings.model),
      seed_(client_seed(run_seed, data_.client_id)) {
  if (data_.client_id.empty()) throw InvalidArgument("client without id");
  if (data_.size() == 0) throw InvalidArgument("client '" + data_.client_id + "' has no samples");
}

RoundMessage Client::upload_statistics(std::uint32_t round) {
  if (phase_ != ClientPhase::Idle)
    throw ProtocolViolation("client '" + id() + "' uploads statistics in phase " +
                            std::string(to_string(phase_)));
  round_ = round;
  Rng rng(derive_seed(round_seed(seed_, round), "stats"));
  SampleStatsOptions opts;
  opts.kind = settings_.augment.stat_kind;
  opts.local_window = settings_.augment.local_window;
  opts.color_space = settings_.color_space;
  own_records_ = sample_statistics(data_, settings_.fed.stat_ratio, rng, opts);
  has_grant_ = false;
  phase_ = ClientPhase::StatsUploaded;
  return RoundMessage{round, StatUpload{id(), own_records_}};
}

void Client::receive_grant(const RoundMessage& grant) {
  const auto* body = std::get_if<PoolGrant>(&grant.body);
  if (!body) throw ProtocolViolation("client expected a PoolGrant");
  if (grant.round != round_) throw StaleMessage("PoolGrant for round " +
                                                std::to_string(grant.round) + " in round " +
                                                std::to_string(round_));
  if (body->client_id != id()) throw ProtocolViolation("PoolGrant addressed to another client");
  if (phase_ != ClientPhase::StatsUploaded)
    throw ProtocolViolation("PoolGrant received in phase " + std::string(to_string(phase_)));
  view_ = settings_.augment.allow_self_fallback ? body->view.with_fallback(own_records_)
                                                : body->view;
  has_grant_ = true;
}

RoundMessage Client::train(const RoundMessage& broadcast, const LossLogSink& log) {
  const auto* global = std::get_if<GlobalBroadcast>(&broadcast.body);
  if (!global) throw ProtocolViolation("client expected a GlobalBroadcast");
  const bool fedstain = settings_.fed.mode == FedMode::FedStain;
  if (fedstain) {
    if (phase_ != ClientPhase::StatsUploaded || !has_grant_)
      throw ProtocolViolation("client '" + id() + "' trains without a pool grant");
    if (broadcast.round != round_) throw StaleMessage("GlobalBroadcast from another round");
  } else {
    if (phase_ != ClientPhase::Idle)
      throw ProtocolViolation("client '" + id() + "' trains in phase " +
                              std::string(to_string(phase_)));
    round_ = broadcast.round;
  }
  phase_ = ClientPhase::Training;

  ModelParams params = global->params;
  const FedConfig& fed = settings_.fed;
  if (!optimizer_ready_) {
    const std::uint64_t total = std::max<std::uint64_t>(
        1, fed.n_round * steps_per_round(data_.size(), fed));
    optimizer_ = make_optimizer(params, fed.lr_start, fed.lr_end, fed.lr_schedule, total);
    optimizer_ready_ = true;
  }

  const std::uint64_t rseed = round_seed(seed_, round_);
  Rng aug_rng(derive_seed(rseed, "augment"));
  std::size_t step = 0;
  try {
    for (std::size_t epoch = 0; epoch < fed.n_epochs; ++epoch) {
      const auto order = epoch_order(rseed, epoch, data_.size());
      for (const auto& batch : make_batches(order, fed.batch_size)) {
        std::vector<ImageTensor> images;
        std::vector<int> labels;
        images.reserve(batch.size());
        labels.reserve(batch.size());
        for (std::size_t i : batch) {
          images.push_back(data_.samples[i].image);
          labels.push_back(data_.samples[i].label);
        }
        StepResult r = fedstain
                           ? fedstain_step(model_, params, images, labels, view_, settings_,
                                           aug_rng)
                           : baseline_step(model_, params, images, labels);
        if (!std::isfinite(r.loss.total))
          throw NonFiniteLoss("client '" + id() + "' produced a non-finite loss");
        const double lr = adam_step(optimizer_, params, r.grads);
        if (!params.all_finite())
          throw NonFiniteLoss("client '" + id() + "' produced non-finite parameters");
        if (log) log(LossLogRow{round_, id(), epoch, step, r.loss, lr});
        ++step;
      }
    }
  } catch (const NonFiniteLoss&) {
    phase_ = ClientPhase::Idle;
    throw;
  }
  phase_ = ClientPhase::ParamsUploaded;
  return RoundMessage{round_, ParamUpload{id(), std::move(params), data_.size()}};
}

void Client::finish_round() {
  if (phase_ != ClientPhase::ParamsUploaded && phase_ != ClientPhase::Idle)
    throw ProtocolViolation("client '" + id() + "' cannot finish in phase " +
                            std::string(to_string(phase_)));
  phase_ = ClientPhase::Idle;
  has_grant_ = false;
}

// ---------------------------------------------------------------------------
// Server.

Server::Server(ModelParams initial, std::vector<RosterEntry> roster)
    : global_(std::move(initial)), roster_(std::move(roster)) {
  std::sort(roster_.begin(), roster_.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 1; i < roster_.size(); ++i)
    if (roster_[i].client_id == roster_[i - 1].client_id)
      throw InvalidArgument("duplicate client '" + roster_[i].client_id + "' in roster");
}

const RosterEntry& Server::find(const std::string& client_id) const {
  for (const auto& r : roster_)
    if (r.client_id == client_id) return r;
  throw UnknownClient("client '" + client_id + "' is not in the roster");
}

void Server::begin_round() {
  ++round_;
  stat_uploads_.clear();
  param_uploads_.clear();
  failed_.clear();
  pool_ = StatPool{};
}

RoundMessage Server::broadcast() const { return RoundMessage{round_, GlobalBroadcast{global_}}; }

void Server::receive(const RoundMessage& message) {
  if (message.round != round_)
    throw StaleMessage("message for round " + std::to_string(message.round) +
                       " received in round " + std::to_string(round_));
  if (const auto* up = std::get_if<StatUpload>(&message.body)) {
    find(up->client_id);
    for (const auto& r : up->records)
      if (r.client_id != up->client_id)
        throw ProtocolViolation("statistic record attributed to another client");
    if (!stat_uploads_.emplace(up->client_id, up->records).second)
      throw ProtocolViolation("duplicate statistic upload from '" + up->client_id + "'");
  } else if (const auto* up = std::get_if<ParamUpload>(&message.body)) {
    const auto& entry = find(up->client_id);
    if (up->n_samples != entry.n_samples)
      throw ProtocolViolation("sample count of '" + up->client_id + "' changed");
    if (!(up->params.layout == global_.layout))
      throw ShapeMismatch("uploaded parameters do not match the global layout");
    if (failed_.count(up->client_id))
      throw ProtocolViolation("upload from a client marked failed this round");
    if (!param_uploads_.emplace(up->client_id, *up).second)
      throw ProtocolViolation("duplicate parameter upload from '" + up->client_id + "'");
  } else {
    throw ProtocolViolation("server accepts only StatUpload and ParamUpload");
  }
}

std::vector<RoundMessage> Server::grant_pools() {
  pool_ = build_pool(stat_uploads_, round_);
  std::vector<RoundMessage> grants;
  for (const auto& r : roster_)
    grants.push_back(RoundMessage{round_, PoolGrant{r.client_id, pool_view(pool_, r.client_id)}});
  return grants;
}

void Server::mark_failed(const std::string& client_id) {
  find(client_id);
  if (param_uploads_.count(client_id))
    throw ProtocolViolation("client '" + client_id + "' already uploaded");
  failed_[client_id] = true;
}

const ModelParams& Server::aggregate() {
  for (const auto& r : roster_)
    if (!failed_.count(r.client_id) && !param_uploads_.count(r.client_id))
      throw ProtocolViolation("aggregation before '" + r.client_id + "' uploaded");
  if (param_uploads_.empty()) throw EmptyRound("no parameter uploads in round " +
                                               std::to_string(round_));
  std::vector<ParamUpload> uploads;
  for (const auto& [id, up] : param_uploads_) uploads.push_back(up);
  global_ = fedavg(uploads);
  return global_;
}

ModelParams fedavg(std::span<const ParamUpload> uploads) {
  if (uploads.empty()) throw EmptyRound("fedavg: no uploads");
  std::vector<const ParamUpload*> order;
  for (const auto& u : uploads) order.push_back(&u);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  const ModelParams& first = order.front()->params;
  long double total = 0.0L;
  for (const auto* u : order) {
    if (u->params.encoder.size() != first.encoder.size() ||
        u->params.classifier.size() != first.classifier.size())
      throw ShapeMismatch("fedavg: parameter vectors differ in size");
    total += static_cast<long double>(u->n_samples);
  }
  if (total <= 0.0L) throw EmptyRound("fedavg: total sample count is zero");

  auto average = [&](auto member) {
    const std::size_t n = (first.*member).size();
    std::vector<long double> acc(n, 0.0L);
    for (const auto* u : order) {
      const auto w = static_cast<long double>(u->n_samples);
      const auto& v = u->params.*member;
      for (std::size_t i = 0; i < n; ++i) acc[i] += w * static_cast<long double>(v[i]);
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(acc[i] / total);
    return out;
  };

  ModelParams result;
  result.layout = first.layout;
  result.encoder = average(&ModelParams::encoder);
  result.classifier = average(&ModelParams::classifier);
  return result;
}

std::vector<RoundMessage> run_stat_round(Server& server, std::vector<Client>& clients,
                                         LoopbackTransport* transport) {
  for (const auto& c : clients)
    if (c.phase() != ClientPhase::Idle)
      throw ProtocolViolation("statistic round requires every client to be Idle");
  auto deliver = [&](const RoundMessage& m) { return transport ? transport->relay(m) : m; };
  for (auto& c : clients) server.receive(deliver(c.upload_statistics(server.round())));
  std::vector<RoundMessage> grants;
  for (auto& g : server.grant_pools()) {
    RoundMessage delivered = deliver(g);
    const auto& id = std::get<PoolGrant>(delivered.body).client_id;
    for (auto& c : clients)
      if (c.id() == id) c.receive_grant(delivered);
    grants.push_back(std::move(delivered));
  }
  return grants;
}

RoundMessage local_train(Client& client, const RoundMessage& broadcast, const LossLogSink& log) {
  return client.train(broadcast, log);
}

// ---------------------------------------------------------------------------
// Partitioning.

std::vector<ClientDataset> partition_dirichlet(std::span<const ClientDataset> domains,
                                               const FedConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t k = cfg.num_clients_per_domain;
  std::vector<ClientDataset> clients;
  for (const auto& dom : domains) {
    if (dom.size() < k * cfg.batch_size)
      throw PartitionInfeasible("domain '" + dom.domain + "' has " + std::to_string(dom.size()) +
                                " samples, needs at least " + std::to_string(k * cfg.batch_size));
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dom.size(); ++i) by_class[dom.samples[i].label].push_back(i);

    std::vector<std::vector<std::size_t>> assigned;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      assigned.assign(k, {});
      ok = true;
      for (const auto& [label, members] : by_class) {
        std::vector<std::size_t> idx = members;
        const auto perm = sample_without_replacement(rng, idx.size(), idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = members[perm[i]];
        const auto p = sample_dirichlet(rng, k, cfg.dirichlet_alpha);
        double cum = 0.0;
        std::size_t start = 0;
        for (std::size_t c = 0; c < k; ++c) {
          cum += p[c];
          const std::size_t end =
              c + 1 == k ? idx.size()
                         : std::min(idx.size(), static_cast<std::size_t>(std::llround(
                                                    cum * static_cast<double>(idx.size()))));
          if (end <= start) ok = false;
          for (std::size_t i = start; i < std::max(start, end); ++i) assigned[c].push_back(idx[i]);
          start = std::max(start, end);
        }
      }
    }
    if (!ok)
      throw PartitionInfeasible("domain '" + dom.domain +
                                "': no Dirichlet draw gave every client every class");
    for (std::size_t c = 0; c < k; ++c) {
      std::sort(assigned[c].begin(), assigned[c].end());
      ClientDataset client;
      client.client_id = dom.domain + "/c" + std::to_string(c);
      client.domain = dom.domain;
      for (std::size_t i : assigned[c]) client.samples.push_back(dom.samples[i]);
      clients.push_back(std::move(client));
    }
  }
  return clients;
}

// ---------------------------------------------------------------------------
// Training driver.

std::size_t worker_threads() {
  const char* env = std::getenv("FEDSTAIN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw InvalidArgument("FEDSTAIN_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

namespace {

struct ClientOutcome {
  std::optional<RoundMessage> upload;
  std::vector<LossLogRow> log;
  bool failed = false;
};

void train_all(std::vector<Client>& clients, const RoundMessage& broadcast,
               std::vector<ClientOutcome>& outcomes) {
  auto run_one = [&](std::size_t i) {
    auto& out = outcomes[i];
    try {
      out.upload = clients[i].train(broadcast,
                                    [&out](const LossLogRow& row) { out.log.push_back(row); });
    } catch (const NonFiniteLoss&) {
      out.failed = true;
    }
  };
  const std::size_t workers = std::min(worker_threads(), clients.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < clients.size(); ++i) run_one(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < clients.size(); i += workers) run_one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

TrainingResult run_federated_training(std::span<const ClientDataset> source_domains,
                                      const TrainSettings& settings, std::uint64_t run_seed,
                                      const LossLogSink& log) {
  settings.fed.validate();
  settings.augment.validate();
  settings.loss.validate();
  const Model model(settings.model);

  Rng part_rng(derive_seed(run_seed, "partition"));
  std::vector<ClientDataset> parts = partition_dirichlet(source_domains, settings.fed, part_rng);

  Rng init_rng(derive_seed(run_seed, "init"));
  std::vector<RosterEntry> roster;
  std::vector<Client> clients;
  for (auto& p : parts) {
    roster.push_back({p.client_id, p.size()});
    clients.emplace_back(std::move(p), settings, run_seed);
  }
  Server server(model.init_params(init_rng), roster);

  std::optional<LoopbackTransport> transport;
  if (settings.fed.loopback_transport) transport.emplace(model.layout());
  auto deliver = [&](const RoundMessage& m) { return transport ? transport->relay(m) : m; };

  TrainingResult result;
  for (std::size_t t = 0; t < settings.fed.n_round; ++t) {
    server.begin_round();
    RoundReport report;
    report.round = server.round();
    if (settings.fed.mode == FedMode::FedStain) {
      run_stat_round(server, clients, transport ? &*transport : nullptr);
      report.pool_size = server.pool().records.size();
    }
    const RoundMessage broadcast = deliver(server.broadcast());
    std::vector<ClientOutcome> outcomes(clients.size());
    train_all(clients, broadcast, outcomes);
    for (std::size_t i = 0; i < clients.size(); ++i) {
      if (outcomes[i].failed) {
        server.mark_failed(clients[i].id());
        report.dropped_clients.push_back(clients[i].id());
      } else {
        server.receive(deliver(*outcomes[i].upload));
      }
      if (log)
        for (const auto& row : outcomes[i].log) log(row);
      clients[i].finish_round();
    }
    server.aggregate();
    result.rounds.push_back(std::move(report));
  }
  result.params = server.global_params();
  if (transport) {
    result.transport_bytes = transport->total_bytes();
    result.frames = transport->frames();
  }
  return result;
}

double evaluate_accuracy(const Model& model, const ModelParams& params,
                         std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidArgument("evaluate_accuracy: no samples");
  std::vector<ImageTensor> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image);
  const auto pred = model.predict(params, images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += pred[i] == samples[i].label;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// LODO.

std::vector<std::string> MetricsReport::domains() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.held_out_domain) == out.end())
      out.push_back(r.held_out_domain);
  return out;
}

namespace {

std::vector<double> domain_values(const MetricsReport& rep, const std::string& domain,
                                  double MetricsRow::*field) {
  std::vector<double> v;
  for (const auto& r : rep.rows)
    if (r.held_out_domain == domain) v.push_back(r.*field);
  if (v.empty()) throw InvalidArgument("no metrics for domain '" + domain + "'");
  return v;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double MetricsReport::domain_mean(const std::string& domain) const {
  return mean_of(domain_values(*this, domain, &MetricsRow::accuracy));
}

double MetricsReport::domain_std(const std::string& domain) const {
  const auto v = domain_values(*this, domain, &MetricsRow::accuracy);
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double MetricsReport::average() const {
  const auto ds = domains();
  if (ds.empty()) throw InvalidArgument("empty metrics report");
  double sum = 0.0;
  for (const auto& d : ds) sum += domain_mean(d);
  return sum / static_cast<double>(ds.size());
}

double MetricsReport::source_average() const {
  const auto ds = domains();
  if (ds.empty()) throw InvalidArgument("empty metrics report");
  double sum = 0.0;
  for (const auto& d : ds) sum += mean_of(domain_values(*this, d, &MetricsRow::source_accuracy));
  return sum / static_cast<double>(ds.size());
}

std::uint64_t lodo_seed(std::uint64_t master_seed, std::size_t repeat) {
  return derive_seed(derive_seed(master_seed, "lodo"), static_cast<std::uint64_t>(repeat));
}

MetricsReport run_lodo(std::span<const ClientDataset> domains, const TrainSettings& settings,
                       const LodoOptions& options) {
  if (domains.size() < 2) throw InvalidArgument("LODO needs at least two domains");
  const Model model(settings.model);
  MetricsReport report;
  report.mode = settings.fed.mode;
  for (std::size_t held = 0; held < domains.size(); ++held) {
    std::vector<ClientDataset> sources;
    for (std::size_t i = 0; i < domains.size(); ++i)
      if (i != held) sources.push_back(domains[i]);
    std::vector<Sample> source_samples;
    for (const auto& s : sources)
      source_samples.insert(source_samples.end(), s.samples.begin(), s.samples.end());

    const std::string& name = domains[held].domain;
    for (std::size_t rep = 0; rep < settings.fed.num_seeds; ++rep) {
      const std::uint64_t seed = lodo_seed(settings.fed.master_seed, rep);
      LossLogSink sink;
      if (options.log) sink = [&](const LossLogRow& row) { options.log(name, seed, row); };
      const TrainingResult run =
          run_federated_training(sources, settings, derive_seed(seed, name), sink);
      MetricsRow row;
      row.held_out_domain = name;
      row.seed = seed;
      row.accuracy = evaluate_accuracy(model, run.params, domains[held].samples);
      row.source_accuracy = evaluate_accuracy(model, run.params, source_samples);
      report.rows.push_back(row);
      if (options.on_run) options.on_run(name, seed, run);
    }
  }
  return report;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << "held_out_domain,seed,accuracy\n";
  out.precision(17);
  for (const auto& r : report.rows)
    out << r.held_out_domain << ',' << r.seed << ',' << r.accuracy << '\n';
}

std::string metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(report.mode);
  nlohmann::ordered_json doms = nlohmann::ordered_json::array();
  for (const auto& d : report.domains()) {
    nlohmann::ordered_json e;
    e["held_out_domain"] = d;
    e["mean_accuracy"] = report.domain_mean(d);
    e["std_accuracy"] = report.domain_std(d);
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& r : report.rows)
      if (r.held_out_domain == d)
        runs.push_back({{"seed", r.seed},
                        {"accuracy", r.accuracy},
                        {"source_accuracy", r.source_accuracy}});
    e["runs"] = std::move(runs);
    doms.push_back(std::move(e));
  }
  j["domains"] = std::move(doms);
  j["average_accuracy"] = report.average();
  j["average_source_accuracy"] = report.source_average();
  return j.dump(2);
}

}  // namespace fedstain
