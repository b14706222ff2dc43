#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedstain/config.hpp"

namespace fedstain {

/// Flags shared by every subcommand; unset flags leave the config as is.
struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "fedstain_out";
  std::optional<FedMode> mode;
};

RunConfig resolve_config(const GlobalOptions& options);

/// Domains named by the config: loaded from data.manifest when set,
/// otherwise synthesized from data.domains under fed.master_seed.
std::vector<ClientDataset> load_domains(const RunConfig& cfg);

BuildReport cmd_build_dataset(const RunConfig& cfg, const std::filesystem::path& out,
                              std::ostream& log);

/// Writes <out>/<domain>/<channel>_{histogram,qq}.csv and
/// <out>/stain_summary.csv; returns the per-domain bundle directories.
std::vector<std::filesystem::path> cmd_analyze_stains(const std::filesystem::path& manifest,
                                                      const std::filesystem::path& out,
                                                      std::ostream& log);

/// LODO run: metrics.csv, metrics.json, loss_log.csv, config.json and one
/// checkpoint per (held-out domain, seed) under <out>/checkpoints.
MetricsReport cmd_train(const RunConfig& cfg, const std::filesystem::path& out,
                        std::ostream& log);

struct AblationResult {
  std::vector<StatKind> kinds;
  std::vector<MetricsReport> reports;
};

/// One FedStain LODO run per configured statistic kind; writes
/// ablation.csv (kinds x domains + avg) and ablation_std.csv.
AblationResult cmd_ablate_stats(const RunConfig& cfg, const std::filesystem::path& out,
                                std::ostream& log);

/// CSV rows (domain, label, e0..e{d-1}); returns the row count.
std::size_t cmd_export_embeddings(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& manifest,
                                  const std::filesystem::path& out_csv, std::ostream& log);

/// Parses argv and dispatches; returns the process exit code
/// (0 success, 1 runtime failure, 2 invalid input or config).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedstain
