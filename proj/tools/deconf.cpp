// deconf: generate synthetic confounded data, train, probe, attribute, sweep, report.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deconf/commands.hpp"
#include "deconf/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kRuntime = 2, kCheckFailed = 3 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  std::string data;
  std::string model;
  std::string refs;
  std::int64_t index = 0;
  int samples = 2000;
};

deconf::exp::ExperimentConfig load(const Options& o) {
  auto config = deconf::exp::load_config(o.config);
  if (o.seed) {
    // The seed flag replaces master_seed; generation seeds keep their offset from it.
    const auto src_offset = config.generation.source.seed - config.master_seed;
    const auto tgt_offset = config.generation.target.seed - config.master_seed;
    config.master_seed = *o.seed;
    config.generation.source.seed = *o.seed + src_offset;
    config.generation.target.seed = *o.seed + tgt_offset;
  }
  if (o.replicates) config.replicates = *o.replicates;
  config.validate();
  return config;
}

std::string out_dir(const Options& o, const deconf::exp::ExperimentConfig* config) {
  if (!o.out.empty()) return o.out;
  return config ? config->output_dir : "run";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confounder-robust classifier training and diagnostics on synthetic data"};
  app.set_version_flag("--version", deconf::exp::software_version());
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--out", o.out, "run directory (default: config output_dir)");
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--replicates", o.replicates, "replicate count override")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("generate", "write source.csv / target.csv");
  add_common(gen, true);
  auto* trn = app.add_subcommand("train", "train the configured method over replicates");
  add_common(trn, true);
  trn->add_option("--data", o.data, "directory holding source.csv and target.csv (default: --out)");
  auto* prb = app.add_subcommand("probe", "predict the nuisance from a model's scores");
  add_common(prb, false);
  prb->add_option("--model", o.model, "model file")->required()->check(CLI::ExistingFile);
  prb->add_option("--data", o.data, "dataset CSV")->required()->check(CLI::ExistingFile);
  auto* att = app.add_subcommand("attribute", "expected-gradients attribution for one sample");
  add_common(att, false);
  att->add_option("--model", o.model, "model file")->required()->check(CLI::ExistingFile);
  att->add_option("--data", o.data, "dataset CSV")->required()->check(CLI::ExistingFile);
  att->add_option("--index", o.index, "sample index")->required();
  att->add_option("--samples", o.samples, "Monte-Carlo samples")->check(CLI::PositiveNumber);
  att->add_option("--refs", o.refs, "reference dataset CSV (default: --data)")->check(CLI::ExistingFile);
  auto* swp = app.add_subcommand("sweep-imbalance", "standard training over engineered base-rate ratios");
  add_common(swp, true);
  auto* rep = app.add_subcommand("report", "join metric files of a run directory");
  rep->add_option("--out", o.out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const auto config = load(o);
      deconf::cmd::cmd_generate(config, out_dir(o, &config));
    } else if (*trn) {
      const auto config = load(o);
      const std::string out = out_dir(o, &config);
      deconf::cmd::cmd_train(config, o.data.empty() ? out : o.data, out);
    } else if (*prb) {
      deconf::diag::ProbeConfig pc;
      if (!o.config.empty()) {
        const auto config = load(o);
        pc.epochs = config.diagnostics.probe_epochs;
        pc.learning_rate = config.diagnostics.probe_lr;
      }
      deconf::cmd::cmd_probe(o.model, o.data, out_dir(o, nullptr), o.seed.value_or(0), pc);
    } else if (*att) {
      std::optional<std::filesystem::path> refs;
      if (!o.refs.empty()) refs = o.refs;
      deconf::cmd::cmd_attribute(o.model, o.data, o.index, o.samples, o.seed.value_or(0), out_dir(o, nullptr), refs);
    } else if (*swp) {
      const auto config = load(o);
      deconf::cmd::cmd_sweep_imbalance(config, out_dir(o, &config));
    } else if (*rep) {
      const auto r = deconf::cmd::cmd_report(o.out);
      std::cout << r.rows << " metric rows, " << r.checks - r.failed_checks << "/" << r.checks
                << " checks passed\n";
      if (r.failed_checks > 0) return kCheckFailed;
    }
  } catch (const deconf::exp::ConfigError& e) {
    std::cerr << "deconf: config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "deconf: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
