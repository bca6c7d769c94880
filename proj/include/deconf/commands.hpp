#pragma once

// Subcommand implementations behind the `deconf` CLI. Every command writes its
// files under a run directory and records them in manifest.json there.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deconf/diagnostics.hpp"
#include "deconf/experiment.hpp"

namespace deconf::cmd {

namespace fs = std::filesystem;

// -- building blocks shared with the acceptance checks -----------------------

// Source split into (train, held-out test) on group_id.
std::pair<Dataset, Dataset> split_source(const exp::ExperimentConfig& config, const Dataset& source);

struct ReplicateResult {
  train::TrainedModel model;
  double source_auroc = 0.0;
  double target_auroc = 0.0;
  std::optional<diag::ProbeReport> probe;           // on the source test split
  std::optional<diag::OrthogonalityReport> orthogonality;
  std::vector<metrics::SubgroupKs> ks;               // continuous nuisance only
};

ReplicateResult run_replicate(const exp::ExperimentConfig& config, const Dataset& source_train,
                              const Dataset& source_test, const Dataset& target, int replicate);

struct SweepRow {
  double ratio = 0.0;
  double target_auroc = 0.0;
  double probe_auroc = 0.0;
  std::uint64_t seed = 0;
};

std::vector<SweepRow> run_sweep(const exp::ExperimentConfig& config);

// True when `values` follow the trend (non-decreasing if `increasing`, else
// non-increasing) except for at most `allowed` adjacent violations, each no
// larger than `tolerance`.
bool trend_holds(const std::vector<double>& values, bool increasing, double tolerance = 0.01,
                 int allowed = 1);

// -- commands ----------------------------------------------------------------

void cmd_generate(const exp::ExperimentConfig& config, const fs::path& out);

// Reads source.csv / target.csv from `data_dir`, writes models, metrics and
// diagnostics to `out`.
void cmd_train(const exp::ExperimentConfig& config, const fs::path& data_dir, const fs::path& out);

void cmd_probe(const fs::path& model_path, const fs::path& data_path, const fs::path& out,
               std::uint64_t seed, const diag::ProbeConfig& probe_config = {});

void cmd_attribute(const fs::path& model_path, const fs::path& data_path, std::int64_t index,
                   int n_samples, std::uint64_t seed, const fs::path& out,
                   const std::optional<fs::path>& reference_path = std::nullopt);

void cmd_sweep_imbalance(const exp::ExperimentConfig& config, const fs::path& out);

struct ReportResult {
  std::size_t rows = 0;
  std::size_t checks = 0;
  std::size_t failed_checks = 0;
};

// Joins every metrics/checks file listed in the manifest into summary.csv and
// summary.txt.
ReportResult cmd_report(const fs::path& run_dir);

}  // namespace deconf::cmd
