#pragma once

// Experiment configuration (JSON, strict keys) and the run manifest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "deconf/dataset.hpp"
#include "deconf/synthgen.hpp"
#include "deconf/trainers.hpp"

namespace deconf::exp {

// Bad or incomplete configuration; maps to the usage/config exit code.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GenerationSection {
  NuisanceKind nuisance = NuisanceKind::kBinary;
  double age_effect = 1.0;
  synth::GenConfig source;
  synth::GenConfig target;
};

struct TrainerSection {
  train::Method method = train::Method::kStandard;
  train::TrainConfig train;
  train::AdvConfig adversarial;
  double source_test_fraction = 0.2;
};

struct DiagnosticsSection {
  bool probe = true;
  bool orthogonality = true;
  bool ks = true;
  bool export_scores = false;
  int probe_epochs = 20;
  double probe_lr = 1e-2;
  std::vector<double> ks_bin_edges{45.0, 65.0, 85.0};
};

struct SweepSection {
  std::vector<double> ratios{1.0, 2.0, 10.0, 100.0};
  std::int64_t n_per_view = 10000;
  double overall_rate = 0.05;
  int seeds = 3;
};

struct ExperimentConfig {
  GenerationSection generation;
  TrainerSection trainer;
  DiagnosticsSection diagnostics;
  SweepSection sweep;
  int replicates = 3;
  std::string output_dir = "run";
  std::uint64_t master_seed = 0;

  // Replicate i trains with master_seed + i * 10007.
  std::uint64_t replicate_seed(int i) const;
  // Hash of the canonical JSON form; identical for any text that parses to the same config.
  std::string hash() const;
  std::string to_json() const;
  void validate() const;
};

// Required: generation.source.n_samples and trainer.method. Everything else has
// a default. The default target is the source with the base rates swapped
// (binary nuisance) or the source itself (continuous; `make_datasets` negates
// age_effect); a `target` section overrides individual keys of that default.
// Generation seeds default to master_seed (source) and source seed + 1 (target).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Source and target datasets for the configured nuisance. With a continuous
// nuisance the target uses -age_effect.
std::pair<Dataset, Dataset> make_datasets(const ExperimentConfig& config);

// Per-command record inside the manifest.
struct RunRecord {
  std::string command;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> files;
  double seconds = 0.0;
  bool complete = false;
  std::string error;
};

struct FileEntry {
  std::string path;  // relative to the run directory
  std::string kind;  // data | model | metrics | checks | plot | summary
};

// manifest.json in the run directory: every file the harness wrote, which
// command wrote it, seeds, timings and version.
class Manifest {
 public:
  static Manifest load_or_create(const std::filesystem::path& run_dir);
  // Throws std::runtime_error when the manifest is missing or unreadable.
  static Manifest load(const std::filesystem::path& run_dir);

  const std::filesystem::path& run_dir() const { return run_dir_; }
  const std::vector<FileEntry>& files() const { return files_; }
  const std::vector<RunRecord>& runs() const { return runs_; }
  bool complete() const;

  // The returned reference is valid until the next begin_run or drop_runs.
  RunRecord& begin_run(const std::string& command, const std::string& config_hash);
  void drop_runs(const std::string& command);
  void add_file(RunRecord& run, const std::filesystem::path& path, const std::string& kind);
  void save() const;

 private:
  std::filesystem::path run_dir_;
  std::vector<FileEntry> files_;
  std::vector<RunRecord> runs_;
};

std::string software_version();

// 6 significant digits, the report format.
std::string fmt6(double v);

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace deconf::exp
