#include "fedstain/commands.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fedstain/error.hpp"

namespace fedstain {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

constexpr const char* kLabChannels[] = {"L", "a", "b"};
std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

RunConfig resolve_config(const GlobalOptions& options) {
  RunConfig cfg = options.config ? load_config(*options.config) : RunConfig{};
  if (options.seed) cfg.fed.master_seed = *options.seed;
  if (options.mode) cfg.fed.mode = *options.mode;
  cfg.validate();
  return cfg;
}

std::vector<ClientDataset> load_domains(const RunConfig& cfg) {
  std::vector<ClientDataset> domains;
  if (!cfg.data.manifest.empty()) {
    domains = load_manifest(read_manifest(cfg.data.manifest), cfg.data.color_space);
  } else {
    for (const auto& spec : cfg.data.domains) {
      ClientDataset d = synthesize_domain(spec, cfg.fed.master_seed, cfg.data.quality);
      if (cfg.data.color_space != ColorSpace::LAB)
        for (auto& s : d.samples) s.image = to_color_space(s.image, cfg.data.color_space);
      domains.push_back(std::move(d));
    }
  }
  for (const auto& d : domains)
    for (const auto& s : d.samples)
      if (s.image.height() != cfg.model.input_size || s.image.width() != cfg.model.input_size)
        throw InvalidArgument("sample '" + s.sample_id + "' does not match model.input_size");
  return domains;
}

BuildReport cmd_build_dataset(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const BuildReport report =
      build_synthetic_dataset(cfg.data.domains, out, cfg.fed.master_seed, cfg.data.quality);
  for (const auto& d : report.domains) {
    log << d.name << ": " << d.n_samples << " samples (" << d.n_label1 << " label 1, "
        << d.rejected << " rejected)\n";
    for (std::size_t c = 0; c < d.realized.channel_count(); ++c)
      log << "  " << kLabChannels[c] << " mean " << fixed(d.realized.mean[c], 3) << " std "
          << fixed(d.realized.std[c], 3) << " skew " << fixed(d.realized.skewness[c], 3)
          << " kurt " << fixed(d.realized.kurtosis[c], 3) << '\n';
  }
  log << "manifest: " << report.manifest_path.string() << '\n';
  return report;
}

std::vector<fs::path> cmd_analyze_stains(const fs::path& manifest, const fs::path& out,
                                         std::ostream& log) {
  const auto domains = load_manifest(read_manifest(manifest), ColorSpace::LAB);
  std::vector<fs::path> bundles;
  auto summary = open_out(out / "stain_summary.csv");
  summary << "domain,channel,mean,std,skewness,excess_kurtosis\n";
  for (const auto& d : domains) {
    if (d.samples.empty()) throw InvalidArgument("domain '" + d.domain + "' has no samples");
    const fs::path dir = out / d.domain;
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> values;
      for (const auto& s : d.samples) {
        const auto ch = s.image.channel(c);
        values.insert(values.end(), ch.begin(), ch.end());
      }
      DistributionDiagnostics diag = analyze_distribution(values, 64);
      // Keep the qq plot readable: 512 evenly spaced order statistics.
      if (diag.qq_points.size() > 512) {
        std::vector<std::pair<double, double>> thin;
        const std::size_t n = diag.qq_points.size();
        for (std::size_t k = 0; k < 512; ++k) thin.push_back(diag.qq_points[k * (n - 1) / 511]);
        diag.qq_points = std::move(thin);
      }
      const std::string name = kLabChannels[c];
      auto hist = open_out(dir / (name + "_histogram.csv"));
      write_histogram_csv(hist, diag);
      auto qq = open_out(dir / (name + "_qq.csv"));
      write_qq_csv(qq, diag);
      summary << d.domain << ',' << name << ',' << diag.fit_mean << ',' << diag.fit_std << ','
              << diag.skewness << ',' << diag.excess_kurtosis << '\n';
      log << d.domain << ' ' << name << ": skewness " << fixed(diag.skewness, 3)
          << ", excess kurtosis " << fixed(diag.excess_kurtosis, 3) << '\n';
    }
    bundles.push_back(dir);
  }
  return bundles;
}

MetricsReport cmd_train(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const auto domains = load_domains(cfg);
  const TrainSettings settings = cfg.train_settings();
  const Model model(cfg.model);

  auto cfg_out = open_out(out / "config.json");
  cfg_out << config_to_json(cfg);
  auto loss_log = open_out(out / "loss_log.csv");
  loss_log << "held_out_domain,seed,round,client,epoch,step,cls,ra,js,total,lr\n";

  LodoOptions options;
  options.log = [&](const std::string& held, std::uint64_t seed, const LossLogRow& r) {
    loss_log << held << ',' << seed << ',' << r.round << ',' << r.client << ',' << r.epoch << ','
             << r.step << ',' << r.loss.cls << ',' << r.loss.ra << ',' << r.loss.js << ','
             << r.loss.total << ',' << r.lr << '\n';
  };
  options.on_run = [&](const std::string& held, std::uint64_t seed, const TrainingResult& run) {
    save_checkpoint(out / "checkpoints" / (held + "_seed" + std::to_string(seed) + ".ckpt"),
                    run.params);
    for (const auto& round : run.rounds)
      for (const auto& c : round.dropped_clients)
        log << "warning: client " << c << " dropped from round " << round.round
            << " (non-finite loss)\n";
  };
  const MetricsReport report = run_lodo(domains, settings, options);

  auto csv = open_out(out / "metrics.csv");
  write_metrics_csv(csv, report);
  auto json = open_out(out / "metrics.json");
  json << metrics_json(report) << '\n';

  log << "mode " << to_string(report.mode) << '\n';
  for (const auto& d : report.domains())
    log << "  " << d << ": " << fixed(100.0 * report.domain_mean(d), 2) << " +/- "
        << fixed(100.0 * report.domain_std(d), 2) << '\n';
  log << "  average: " << fixed(100.0 * report.average(), 2) << '\n';
  return report;
}

AblationResult cmd_ablate_stats(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  AblationResult result;
  for (StatKind kind : cfg.ablation.kinds) {
    RunConfig run = cfg;
    run.fed.mode = FedMode::FedStain;
    run.augment.stat_kind = kind;
    log << "== " << to_string(kind) << '\n';
    result.kinds.push_back(kind);
    result.reports.push_back(cmd_train(run, out / std::string(to_string(kind)), log));
  }
  const auto domains = result.reports.front().domains();
  auto mean_csv = open_out(out / "ablation.csv");
  auto std_csv = open_out(out / "ablation_std.csv");
  for (auto* f : {&mean_csv, &std_csv}) {
    *f << "stat_kind";
    for (const auto& d : domains) *f << ',' << d;
    *f << ",avg\n";
  }
  for (std::size_t i = 0; i < result.kinds.size(); ++i) {
    const auto& rep = result.reports[i];
    mean_csv << to_string(result.kinds[i]);
    std_csv << to_string(result.kinds[i]);
    for (const auto& d : domains) {
      mean_csv << ',' << rep.domain_mean(d);
      std_csv << ',' << rep.domain_std(d);
    }
    // Std of the average across seeds.
    std::vector<double> per_seed(cfg.fed.num_seeds, 0.0);
    for (const auto& d : domains) {
      std::size_t k = 0;
      for (const auto& row : rep.rows)
        if (row.held_out_domain == d) per_seed[k++] += row.accuracy / static_cast<double>(domains.size());
    }
    double m = 0.0, ss = 0.0;
    for (double v : per_seed) m += v / static_cast<double>(per_seed.size());
    for (double v : per_seed) ss += (v - m) * (v - m);
    const double sd = per_seed.size() > 1 ? std::sqrt(ss / static_cast<double>(per_seed.size() - 1)) : 0.0;
    mean_csv << ',' << rep.average() << '\n';
    std_csv << ',' << sd << '\n';
  }
  return result;
}

std::size_t cmd_export_embeddings(const RunConfig& cfg, const fs::path& checkpoint,
                                  const fs::path& manifest, const fs::path& out_csv,
                                  std::ostream& log) {
  const Model model(cfg.model);
  const ModelParams params = load_checkpoint(checkpoint, model.layout());
  RunConfig data_cfg = cfg;
  if (!manifest.empty()) data_cfg.data.manifest = manifest.string();
  const auto domains = load_domains(data_cfg);

  auto out = open_out(out_csv);
  out << "domain,label";
  for (std::size_t k = 0; k < cfg.model.embed_dim; ++k) out << ",e" << k;
  out << '\n';
  std::size_t rows = 0;
  constexpr std::size_t kChunk = 256;
  for (const auto& d : domains) {
    for (std::size_t start = 0; start < d.size(); start += kChunk) {
      const std::size_t end = std::min(d.size(), start + kChunk);
      std::vector<ImageTensor> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(d.samples[i].image);
      const ForwardCache cache = model.forward(params, batch);
      for (std::size_t i = start; i < end; ++i) {
        out << d.domain << ',' << d.samples[i].label;
        const auto col = static_cast<Eigen::Index>(i - start);
        for (Eigen::Index k = 0; k < cache.embeddings.rows(); ++k)
          out << ',' << cache.embeddings(k, col);
        out << '\n';
        ++rows;
      }
    }
  }
  log << "wrote " << rows << " embeddings to " << out_csv.string() << '\n';
  return rows;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated stain-statistics domain generalization simulator", "fedstain"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "fedstain_out", mode;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_path, "JSON run configuration");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides fed.master_seed)");
  app.add_option("--out", out_dir, "Output directory");
  auto* mode_opt = app.add_option("--mode", mode, "fedstain or fedavg_baseline")
                       ->check(CLI::IsMember({"fedstain", "fedavg_baseline"}));

  auto* build = app.add_subcommand("build-dataset", "Generate the synthetic benchmark");
  std::string manifest_path, checkpoint_path;
  auto* analyze = app.add_subcommand("analyze-stains", "Per-domain stain distribution diagnostics");
  analyze->add_option("--manifest", manifest_path, "Manifest file or dataset directory");
  auto* train = app.add_subcommand("train", "Leave-one-domain-out training");
  auto* ablate = app.add_subcommand("ablate-stats", "Compare exchanged statistic kinds");
  auto* exportc = app.add_subcommand("export-embeddings", "Dump encoder embeddings as CSV");
  exportc->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  exportc->add_option("--manifest", manifest_path, "Manifest file or dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    GlobalOptions g;
    if (*config_opt) g.config = config_path;
    if (*seed_opt) g.seed = seed;
    if (*mode_opt) g.mode = parse_fed_mode(mode);
    g.out = out_dir;
    const RunConfig cfg = resolve_config(g);

    if (*build) {
      cmd_build_dataset(cfg, g.out, out);
    } else if (*analyze) {
      std::string m = manifest_path.empty() ? cfg.data.manifest : manifest_path;
      if (m.empty()) throw InvalidArgument("analyze-stains needs --manifest or data.manifest");
      cmd_analyze_stains(m, g.out, out);
    } else if (*train) {
      cmd_train(cfg, g.out, out);
    } else if (*ablate) {
      cmd_ablate_stats(cfg, g.out, out);
    } else if (*exportc) {
      cmd_export_embeddings(cfg, checkpoint_path, manifest_path, g.out / "embeddings.csv", out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.invalid_input() ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fedstain
