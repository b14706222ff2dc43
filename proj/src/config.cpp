#include "fedstain/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "fedstain/error.hpp"

namespace fedstain {

using Json = nlohmann::ordered_json;

namespace {

/// Reads keys from one JSON object and rejects any key left unread.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw InvalidArgument("config: unknown key '" + path_ + "." + key + "'");
  }

  const Json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const Json* v = get(key)) {
      try {
        out = v->get<T>();
      } catch (const nlohmann::json::exception&) {
        throw InvalidArgument("config: '" + path_ + "." + key + "' has the wrong type");
      }
    }
  }

  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (get(key)) {
      read(key, s);
      out = parse(s);
    }
  }

  std::string child(const std::string& key) const { return path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void read_unsigned(Section& s, const std::string& key, T& out) {
  if (const Json* v = s.get(key)) {
    if (!v->is_number_unsigned())
      throw InvalidArgument("config: '" + key + "' must be a non-negative integer");
    out = v->get<T>();
  }
}

Json fed_to_json(const FedConfig& f) {
  return {{"n_round", f.n_round},
          {"n_epochs", f.n_epochs},
          {"batch_size", f.batch_size},
          {"stat_ratio", f.stat_ratio},
          {"dirichlet_alpha", f.dirichlet_alpha},
          {"num_clients_per_domain", f.num_clients_per_domain},
          {"mode", to_string(f.mode)},
          {"master_seed", f.master_seed},
          {"num_seeds", f.num_seeds},
          {"lr_start", f.lr_start},
          {"lr_end", f.lr_end},
          {"lr_schedule", to_string(f.lr_schedule)},
          {"loopback_transport", f.loopback_transport}};
}

void fed_from_json(const Json& j, FedConfig& f) {
  Section s(j, "fed");
  read_unsigned(s, "n_round", f.n_round);
  read_unsigned(s, "n_epochs", f.n_epochs);
  read_unsigned(s, "batch_size", f.batch_size);
  s.read("stat_ratio", f.stat_ratio);
  s.read("dirichlet_alpha", f.dirichlet_alpha);
  read_unsigned(s, "num_clients_per_domain", f.num_clients_per_domain);
  s.read_enum("mode", f.mode, parse_fed_mode);
  read_unsigned(s, "master_seed", f.master_seed);
  read_unsigned(s, "num_seeds", f.num_seeds);
  s.read("lr_start", f.lr_start);
  s.read("lr_end", f.lr_end);
  s.read_enum("lr_schedule", f.lr_schedule, parse_lr_schedule);
  s.read("loopback_transport", f.loopback_transport);
}

Json augment_to_json(const AugmentConfig& a) {
  Json ops = Json::array();
  for (AugOp op : a.augmix_ops) ops.push_back(to_string(op));
  Json j = {{"randstain_prob", a.randstain_prob},
            {"mixstyle_beta_alpha", a.mixstyle_beta_alpha},
            {"augmix_chains", a.augmix_chains},
            {"augmix_depth_min", a.augmix_depth_min},
            {"augmix_depth_max", a.augmix_depth_max},
            {"augmix_ops", ops},
            {"literal_eq1", a.literal_eq1},
            {"mixstyle_level", to_string(a.mixstyle_level)},
            {"stat_kind", to_string(a.stat_kind)},
            {"local_window", a.local_window},
            {"allow_self_fallback", a.allow_self_fallback}};
  j["force_lambda"] = a.force_lambda ? Json(*a.force_lambda) : Json(nullptr);
  j["force_skip_weight"] = a.force_skip_weight ? Json(*a.force_skip_weight) : Json(nullptr);
  return j;
}

void optional_double(Section& s, const std::string& key, std::optional<double>& out) {
  if (const Json* v = s.get(key)) {
    if (v->is_null()) {
      out.reset();
    } else if (v->is_number()) {
      out = v->get<double>();
    } else {
      throw InvalidArgument("config: '" + key + "' must be a number or null");
    }
  }
}

void augment_from_json(const Json& j, AugmentConfig& a) {
  Section s(j, "augment");
  s.read("randstain_prob", a.randstain_prob);
  s.read("mixstyle_beta_alpha", a.mixstyle_beta_alpha);
  s.read("augmix_chains", a.augmix_chains);
  s.read("augmix_depth_min", a.augmix_depth_min);
  s.read("augmix_depth_max", a.augmix_depth_max);
  if (s.get("augmix_ops")) {
    std::vector<std::string> names;
    s.read("augmix_ops", names);
    a.augmix_ops.clear();
    for (const auto& n : names) a.augmix_ops.push_back(parse_aug_op(n));
  }
  s.read("literal_eq1", a.literal_eq1);
  s.read_enum("mixstyle_level", a.mixstyle_level, parse_mixstyle_level);
  s.read_enum("stat_kind", a.stat_kind, parse_stat_kind);
  read_unsigned(s, "local_window", a.local_window);
  s.read("allow_self_fallback", a.allow_self_fallback);
  optional_double(s, "force_lambda", a.force_lambda);
  optional_double(s, "force_skip_weight", a.force_skip_weight);
}

Json loss_to_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta}, {"tau", w.tau}, {"cls_loss", to_string(w.cls_loss)}};
}

void loss_from_json(const Json& j, LossWeights& w) {
  Section s(j, "loss");
  s.read("alpha", w.alpha);
  s.read("beta", w.beta);
  s.read("tau", w.tau);
  s.read_enum("cls_loss", w.cls_loss, parse_cls_loss);
}

Json model_to_json(const ModelConfig& m) {
  return {{"in_channels", m.in_channels},   {"input_size", m.input_size},
          {"conv_channels", m.conv_channels}, {"embed_dim", m.embed_dim},
          {"num_classes", m.num_classes},   {"input_offset", m.input_offset},
          {"input_scale", m.input_scale}};
}

void model_from_json(const Json& j, ModelConfig& m) {
  Section s(j, "model");
  read_unsigned(s, "in_channels", m.in_channels);
  read_unsigned(s, "input_size", m.input_size);
  s.read("conv_channels", m.conv_channels);
  read_unsigned(s, "embed_dim", m.embed_dim);
  read_unsigned(s, "num_classes", m.num_classes);
  s.read("input_offset", m.input_offset);
  s.read("input_scale", m.input_scale);
}

Json domain_to_json(const DomainSpec& d) {
  Json targets = Json::array();
  for (const auto& t : d.targets)
    targets.push_back({{"mean", t.mean},
                       {"std", t.std},
                       {"skewness", t.skewness},
                       {"kurtosis", t.kurtosis},
                       {"inverted", t.inverted}});
  return {{"name", d.name},
          {"targets", targets},
          {"texture_seed", d.texture_seed},
          {"n_samples", d.n_samples},
          {"class_balance", d.class_balance},
          {"image_size", d.image_size},
          {"mean_jitter", d.mean_jitter},
          {"std_jitter", d.std_jitter}};
}

DomainSpec domain_from_json(const Json& j, const std::string& path) {
  DomainSpec d;
  Section s(j, path);
  s.read("name", d.name);
  if (const Json* t = s.get("targets")) {
    if (!t->is_array()) throw InvalidArgument("config: '" + path + ".targets' must be an array");
    for (std::size_t i = 0; i < t->size(); ++i) {
      ChannelTarget ct;
      Section ts((*t)[i], path + ".targets[" + std::to_string(i) + "]");
      ts.read("mean", ct.mean);
      ts.read("std", ct.std);
      ts.read("skewness", ct.skewness);
      ts.read("kurtosis", ct.kurtosis);
      ts.read("inverted", ct.inverted);
      d.targets.push_back(ct);
    }
  }
  read_unsigned(s, "texture_seed", d.texture_seed);
  read_unsigned(s, "n_samples", d.n_samples);
  s.read("class_balance", d.class_balance);
  read_unsigned(s, "image_size", d.image_size);
  s.read("mean_jitter", d.mean_jitter);
  s.read("std_jitter", d.std_jitter);
  return d;
}

Json data_to_json(const DataConfig& d) {
  Json domains = Json::array();
  for (const auto& spec : d.domains) domains.push_back(domain_to_json(spec));
  return {{"manifest", d.manifest},
          {"domains", domains},
          {"quality",
           {{"max_white_fraction", d.quality.max_white_fraction},
            {"min_edge_complexity", d.quality.min_edge_complexity},
            {"min_color_spread", d.quality.min_color_spread}}},
          {"color_space", to_string(d.color_space)}};
}

void data_from_json(const Json& j, DataConfig& d) {
  Section s(j, "data");
  s.read("manifest", d.manifest);
  if (const Json* doms = s.get("domains")) {
    if (!doms->is_array()) throw InvalidArgument("config: 'data.domains' must be an array");
    d.domains.clear();
    for (std::size_t i = 0; i < doms->size(); ++i)
      d.domains.push_back(domain_from_json((*doms)[i], "data.domains[" + std::to_string(i) + "]"));
  }
  if (const Json* q = s.get("quality")) {
    Section qs(*q, "data.quality");
    qs.read("max_white_fraction", d.quality.max_white_fraction);
    qs.read("min_edge_complexity", d.quality.min_edge_complexity);
    qs.read("min_color_spread", d.quality.min_color_spread);
  }
  s.read_enum("color_space", d.color_space, parse_color_space);
}

Json ablation_to_json(const AblationConfig& a) {
  Json kinds = Json::array();
  for (StatKind k : a.kinds) kinds.push_back(to_string(k));
  return {{"kinds", kinds}};
}

void ablation_from_json(const Json& j, AblationConfig& a) {
  Section s(j, "ablation");
  if (s.get("kinds")) {
    std::vector<std::string> names;
    s.read("kinds", names);
    a.kinds.clear();
    for (const auto& n : names) a.kinds.push_back(parse_stat_kind(n));
  }
}

}  // namespace

void RunConfig::validate() const {
  fed.validate();
  augment.validate();
  loss.validate();
  model.validate();
  if (augment.local_window == 0) throw InvalidWindow("local_window must be positive");
  if (model.in_channels != 3) throw InvalidArgument("model.in_channels must be 3 for stained images");
  if (ablation.kinds.empty()) throw InvalidArgument("ablation.kinds must be nonempty");
  if (data.manifest.empty()) {
    if (data.domains.size() < 2) throw InvalidArgument("data.domains needs at least two domains");
    for (const auto& d : data.domains) {
      d.validate();
      if (d.image_size != model.input_size)
        throw InvalidArgument("domain '" + d.name + "' image_size differs from model.input_size");
    }
  }
}

TrainSettings RunConfig::train_settings() const {
  return TrainSettings{fed, augment, loss, model, data.color_space};
}

std::string config_to_json(const RunConfig& cfg) {
  Json j;
  j["fed"] = fed_to_json(cfg.fed);
  j["augment"] = augment_to_json(cfg.augment);
  j["loss"] = loss_to_json(cfg.loss);
  j["model"] = model_to_json(cfg.model);
  j["data"] = data_to_json(cfg.data);
  j["ablation"] = ablation_to_json(cfg.ablation);
  return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  {
    Section root(j, "config");
    if (const Json* v = root.get("fed")) fed_from_json(*v, cfg.fed);
    if (const Json* v = root.get("augment")) augment_from_json(*v, cfg.augment);
    if (const Json* v = root.get("loss")) loss_from_json(*v, cfg.loss);
    if (const Json* v = root.get("model")) model_from_json(*v, cfg.model);
    if (const Json* v = root.get("data")) data_from_json(*v, cfg.data);
    if (const Json* v = root.get("ablation")) ablation_from_json(*v, cfg.ablation);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

}  // namespace fedstain
