#include "deconf/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "deconf/metrics.hpp"
#include "deconf/model_io.hpp"

namespace deconf::cmd {

namespace {

void log(const std::string& msg) { std::cerr << "[deconf] " << msg << "\n"; }

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& header) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out_ << header << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  ~CsvFile() { out_.close(); }

 private:
  std::ofstream out_;
  fs::path path_;
};

using exp::fmt6;

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); 0 for a single value.
double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

Dataset load_dataset(const fs::path& path) {
  if (!fs::exists(path)) {
    throw std::runtime_error("dataset " + path.string() + " does not exist (run `deconf generate` first)");
  }
  return load_csv(path);
}

std::string stem(const fs::path& p) { return p.stem().string(); }

struct CheckRow {
  std::string name;
  bool passed = false;
  double value = 0.0;
  std::string bound;
};

void write_checks(const fs::path& path, const std::vector<CheckRow>& checks) {
  CsvFile f(path, "check,passed,value,bound");
  for (const auto& c : checks) f.row({c.name, c.passed ? "1" : "0", fmt6(c.value), c.bound});
}

// Runs `body` as one manifest-recorded command; on failure the run is saved as
// incomplete and the exception propagates.
template <typename F>
void recorded(const fs::path& out, const std::string& command, const std::string& config_hash, F&& body) {
  fs::create_directories(out);
  auto manifest = exp::Manifest::load_or_create(out);
  exp::RunRecord& run = manifest.begin_run(command, config_hash);
  const exp::Stopwatch clock;
  try {
    body(manifest, run);
    run.complete = true;
  } catch (const std::exception& e) {
    run.error = e.what();
    run.seconds = clock.seconds();
    manifest.save();
    throw;
  }
  run.seconds = clock.seconds();
  manifest.save();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split_source(const exp::ExperimentConfig& config, const Dataset& source) {
  return train::split_train_val(source, config.trainer.source_test_fraction,
                                train::derive_seed(config.master_seed, 42));
}

ReplicateResult run_replicate(const exp::ExperimentConfig& config, const Dataset& source_train,
                              const Dataset& source_test, const Dataset& target, int replicate) {
  train::TrainConfig tc = config.trainer.train;
  tc.seed = config.replicate_seed(replicate);
  ReplicateResult r;
  r.model = train::train(config.trainer.method, source_train, tc, config.trainer.adversarial);
  r.model.config_hash = config.hash();

  const auto src_scores = train::predict_scores(r.model, source_test);
  r.source_auroc = metrics::auroc(src_scores, source_test.labels());
  r.target_auroc = metrics::auroc(train::predict_scores(r.model, target), target.labels());

  const auto& d = config.diagnostics;
  const auto kind = source_test.nuisance_kind();
  if (d.probe) {
    if (source_test.size() < diag::kMinProbeSamples) {
      log("probe skipped: source test split has fewer than " + std::to_string(diag::kMinProbeSamples) + " samples");
    } else {
      diag::ProbeConfig pc;
      pc.epochs = d.probe_epochs;
      pc.learning_rate = d.probe_lr;
      r.probe = diag::probe_nuisance(src_scores, source_test.nuisance(), kind, tc.seed, pc);
    }
  }
  if (d.orthogonality && kind == NuisanceKind::kBinary) {
    r.orthogonality = diag::orthogonality(train::hidden_embedding(r.model, source_test), source_test.nuisance(),
                                          source_test.labels());
    if (r.orthogonality->pca.degenerate) log("orthogonality: hidden embedding has rank < 2");
  }
  if (d.ks && kind == NuisanceKind::kContinuous) {
    r.ks = metrics::pairwise_subgroup_ks(src_scores, source_test.nuisance(), d.ks_bin_edges);
  }
  return r;
}

bool trend_holds(const std::vector<double>& values, bool increasing, double tolerance, int allowed) {
  int violations = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double step = increasing ? values[i] - values[i - 1] : values[i - 1] - values[i];
    if (step < 0.0) {
      if (-step > tolerance) return false;
      ++violations;
    }
  }
  return violations <= allowed;
}

std::vector<SweepRow> run_sweep(const exp::ExperimentConfig& config) {
  if (config.generation.nuisance != NuisanceKind::kBinary) {
    throw exp::ConfigError("sweep-imbalance needs a binary nuisance");
  }
  const auto& sw = config.sweep;
  std::vector<synth::ImbalanceCounts> counts;
  for (double r : sw.ratios) counts.push_back(synth::engineered_imbalance(r, sw.n_per_view, sw.overall_rate));

  std::vector<SweepRow> rows;
  for (int s = 0; s < sw.seeds; ++s) {
    const std::uint64_t seed = config.replicate_seed(s);
    synth::GenConfig target_cfg = config.generation.target;
    target_cfg.seed = train::derive_seed(seed, 21);
    const Dataset target = synth::generate(target_cfg);
    for (std::size_t k = 0; k < sw.ratios.size(); ++k) {
      synth::GenConfig gen = config.generation.source;
      gen.seed = train::derive_seed(seed, 22 + 2 * k);
      const Dataset train_set = synth::realize_counts(counts[k], gen);
      gen.seed = train::derive_seed(seed, 23 + 2 * k);
      const Dataset probe_set = synth::realize_counts(counts[k], gen);

      train::TrainConfig tc = config.trainer.train;
      tc.seed = seed;
      const auto model = train::train_standard(train_set, tc);
      diag::ProbeConfig pc;
      pc.epochs = config.diagnostics.probe_epochs;
      pc.learning_rate = config.diagnostics.probe_lr;
      const auto probe = diag::probe_nuisance(train::predict_scores(model, probe_set), probe_set.nuisance(),
                                              NuisanceKind::kBinary, seed, pc);
      rows.push_back({sw.ratios[k], metrics::auroc(train::predict_scores(model, target), target.labels()),
                      probe.auroc, seed});
      log("sweep ratio " + fmt6(sw.ratios[k]) + " seed " + std::to_string(seed) + ": target AUROC " +
          fmt6(rows.back().target_auroc) + ", probe AUROC " + fmt6(rows.back().probe_auroc));
    }
  }
  return rows;
}

void cmd_generate(const exp::ExperimentConfig& config, const fs::path& out) {
  recorded(out, "generate", config.hash(), [&](exp::Manifest& m, exp::RunRecord& run) {
    run.seeds = {config.generation.source.seed, config.generation.target.seed};
    const auto [source, target] = exp::make_datasets(config);
    save_csv(source, out / "source.csv");
    m.add_file(run, out / "source.csv", "data");
    save_csv(target, out / "target.csv");
    m.add_file(run, out / "target.csv", "data");
    log("generated " + std::to_string(source.size()) + " source and " + std::to_string(target.size()) +
        " target samples in " + out.string());
  });
}

void cmd_train(const exp::ExperimentConfig& config, const fs::path& data_dir, const fs::path& out) {
  const Dataset source = load_dataset(data_dir / "source.csv");
  const Dataset target = load_dataset(data_dir / "target.csv");
  if (source.nuisance_kind() != config.generation.nuisance) {
    throw exp::ConfigError("source.csv nuisance kind does not match generation.nuisance in the config");
  }
  const std::string method = train::to_string(config.trainer.method);

  recorded(out, "train", config.hash(), [&](exp::Manifest& m, exp::RunRecord& run) {
    const auto [train_set, test_set] = split_source(config, source);
    save_csv(test_set, out / "source_test.csv");
    m.add_file(run, out / "source_test.csv", "data");
    fs::create_directories(out / "models");

    // (domain, metric) -> per-replicate values, in first-seen order
    std::vector<std::pair<std::pair<std::string, std::string>, std::vector<double>>> table;
    const auto record = [&table](const std::string& domain, const std::string& metric, double value) {
      for (auto& [key, values] : table) {
        if (key.first == domain && key.second == metric) {
          values.push_back(value);
          return;
        }
      }
      table.push_back({{domain, metric}, {value}});
    };
    std::vector<CheckRow> checks;

    for (int i = 0; i < config.replicates; ++i) {
      run.seeds.push_back(config.replicate_seed(i));
      ReplicateResult r;
      try {
        r = run_replicate(config, train_set, test_set, target, i);
      } catch (const exp::ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw std::runtime_error("replicate " + std::to_string(i) + " failed: " + e.what());
      }
      const std::string tag = method + "_rep" + std::to_string(i);
      io::save_model(r.model, out / "models" / (tag + ".json"));
      m.add_file(run, out / "models" / (tag + ".json"), "model");
      record("source", "auroc", r.source_auroc);
      record("target", "auroc", r.target_auroc);
      if (r.probe) {
        const bool binary = r.probe->kind == NuisanceKind::kBinary;
        record("source", binary ? "probe_auroc" : "probe_r2", binary ? r.probe->auroc : r.probe->r2);
        if (binary && config.trainer.method == train::Method::kAdversarial) {
          checks.push_back({"adversarial_probe_auroc_rep" + std::to_string(i),
                            r.probe->auroc >= 0.45 && r.probe->auroc <= 0.58, r.probe->auroc, "0.45..0.58"});
        }
      }
      if (r.orthogonality) {
        record("source", "orthogonality_r", r.orthogonality->r);
        const fs::path path = out / ("embedding_" + tag + ".csv");
        CsvFile f(path, "pc1,pc2,view,label");
        const auto& e = r.orthogonality->pca.embedding;
        for (Eigen::Index k = 0; k < e.rows(); ++k) {
          const auto s = static_cast<std::size_t>(k);
          f.row({fmt6(e(k, 0)), fmt6(e(k, 1)), fmt6(test_set.nuisance()[s]), std::to_string(test_set.label(s))});
        }
        m.add_file(run, path, "plot");
      }
      if (!r.ks.empty()) {
        const fs::path path = out / ("ks_" + tag + ".csv");
        CsvFile f(path, "bin_a,bin_b,d_stat");
        for (const auto& k : r.ks) {
          f.row({std::to_string(k.bin_a), std::to_string(k.bin_b), fmt6(k.ks.d_statistic)});
          record("source", "ks_" + std::to_string(k.bin_a) + "_" + std::to_string(k.bin_b), k.ks.d_statistic);
        }
        m.add_file(run, path, "plot");
      }
      if (r.probe && r.probe->kind == NuisanceKind::kBinary) {
        const fs::path path = out / ("probe_roc_" + tag + ".csv");
        CsvFile f(path, "fpr,tpr");
        for (const auto& p : r.probe->roc.points) f.row({fmt6(p.fpr), fmt6(p.tpr)});
        m.add_file(run, path, "plot");
      }
      if (config.diagnostics.export_scores) {
        const fs::path path = out / ("scores_" + tag + ".csv");
        CsvFile f(path, "domain,score,label,nuisance");
        for (const Dataset* ds : {&test_set, &target}) {
          const auto scores = train::predict_scores(r.model, *ds);
          const std::string dom = to_string(ds->domains().empty() ? Domain::kSource : ds->domains()[0]);
          for (std::size_t k = 0; k < ds->size(); ++k) {
            f.row({dom, fmt6(scores[k]), std::to_string(ds->label(k)), fmt6(ds->nuisance()[k])});
          }
        }
        m.add_file(run, path, "plot");
      }
      log(method + " replicate " + std::to_string(i) + ": source AUROC " + fmt6(r.source_auroc) +
          ", target AUROC " + fmt6(r.target_auroc));
    }

    {
      const fs::path path = out / ("metrics_" + method + ".csv");
      CsvFile f(path, "method,domain,metric,replicate,value,std");
      for (const auto& [key, values] : table) {
        for (std::size_t i = 0; i < values.size(); ++i) {
          f.row({method, key.first, key.second, std::to_string(i), fmt6(values[i]), ""});
        }
        f.row({method, key.first, key.second, "mean", fmt6(mean_of(values)), fmt6(sample_sd(values))});
      }
      m.add_file(run, path, "metrics");
    }
    {
      const fs::path path = out / ("table_" + method + ".csv");
      CsvFile f(path, "Method,Source (Internal),Target (External)");
      const auto cell = [&](const std::string& domain) {
        for (const auto& [key, values] : table) {
          if (key.first == domain && key.second == "auroc") {
            return fmt6(mean_of(values)) + " ± " + fmt6(sample_sd(values));
          }
        }
        return std::string();
      };
      f.row({method, cell("source"), cell("target")});
      m.add_file(run, path, "table");
    }
    if (!checks.empty()) {
      write_checks(out / ("checks_train_" + method + ".csv"), checks);
      m.add_file(run, out / ("checks_train_" + method + ".csv"), "checks");
    }
  });
}

void cmd_probe(const fs::path& model_path, const fs::path& data_path, const fs::path& out, std::uint64_t seed,
               const diag::ProbeConfig& probe_config) {
  const auto model = io::load_model(model_path);
  const Dataset data = load_dataset(data_path);
  if (model.adversary && model.adversary->kind != data.nuisance_kind()) {
    throw std::invalid_argument("nuisance kind mismatch: model adversary is " + to_string(model.adversary->kind) +
                                ", dataset nuisance is " + to_string(data.nuisance_kind()));
  }
  if (data.dim() != model.spec.input_dim()) {
    throw nn::DimensionError("dataset has " + std::to_string(data.dim()) + " features, model expects " +
                             std::to_string(model.spec.input_dim()));
  }
  recorded(out, "probe", model.config_hash, [&](exp::Manifest& m, exp::RunRecord& run) {
    run.seeds = {seed};
    const auto report =
        diag::probe_nuisance(train::predict_scores(model, data), data.nuisance(), data.nuisance_kind(), seed,
                             probe_config);
    const std::string tag = stem(model_path) + "_" + stem(data_path);
    const fs::path path = out / ("probe_" + tag + ".csv");
    {
      CsvFile f(path, "model,dataset,nuisance_kind,metric,value");
      const std::string kind = to_string(report.kind);
      const auto row = [&](const std::string& metric, double v) {
        f.row({stem(model_path), stem(data_path), kind, metric, fmt6(v)});
      };
      if (report.kind == NuisanceKind::kBinary) {
        row("auroc", report.auroc);
      } else {
        row("r2", report.r2);
        row("mse", report.mse);
      }
      row("n_test", static_cast<double>(report.n_test));
    }
    m.add_file(run, path, "metrics");
    if (report.kind == NuisanceKind::kBinary) {
      const fs::path roc = out / ("probe_roc_" + tag + ".csv");
      CsvFile f(roc, "fpr,tpr");
      for (const auto& p : report.roc.points) f.row({fmt6(p.fpr), fmt6(p.tpr)});
      m.add_file(run, roc, "plot");
      log("probe AUROC " + fmt6(report.auroc) + " on " + std::to_string(report.n_test) + " held-out samples");
    } else {
      log("probe R^2 " + fmt6(report.r2) + " on " + std::to_string(report.n_test) + " held-out samples");
    }
  });
}

void cmd_attribute(const fs::path& model_path, const fs::path& data_path, std::int64_t index, int n_samples,
                   std::uint64_t seed, const fs::path& out, const std::optional<fs::path>& reference_path) {
  const auto model = io::load_model(model_path);
  const Dataset data = load_dataset(data_path);
  if (index < 0 || static_cast<std::size_t>(index) >= data.size()) {
    throw exp::ConfigError("sample index " + std::to_string(index) + " out of range [0, " +
                           std::to_string(data.size()) + ")");
  }
  const Dataset refs = reference_path ? load_dataset(*reference_path) : data;
  recorded(out, "attribute", model.config_hash, [&](exp::Manifest& m, exp::RunRecord& run) {
    run.seeds = {seed};
    const auto scalar = diag::ScalarModel::of(model);
    const auto x = data.sample(static_cast<std::size_t>(index)).features;
    const auto attr = diag::expected_gradients(scalar, x, refs, n_samples, seed);
    const auto clipped = diag::clip_attributions(attr.values);

    const std::string tag = stem(model_path) + "_" + std::to_string(index);
    const auto write_attr = [&](const std::string& name, const std::vector<double>& values) {
      const fs::path path = out / name;
      CsvFile f(path, "feature_index,value");
      for (std::size_t i = 0; i < values.size(); ++i) f.row({std::to_string(i), fmt6(values[i])});
      m.add_file(run, path, "plot");
    };
    write_attr("attr_" + tag + ".csv", attr.values);
    write_attr("attr_" + tag + "_clipped.csv", clipped);

    const Eigen::MatrixXd xm = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const double fx = scalar.evaluate(xm)(0);
    const double f_ref = scalar.evaluate(refs.features()).mean();
    const double total = std::accumulate(attr.values.begin(), attr.values.end(), 0.0);
    const double gap = std::abs(total - (fx - f_ref));
    const double denom = std::abs(fx - f_ref);
    const fs::path path = out / ("attr_" + tag + "_summary.csv");
    {
      CsvFile f(path, "metric,value");
      f.row({"sum_attributions", fmt6(total)});
      f.row({"f_x", fmt6(fx)});
      f.row({"mean_f_reference", fmt6(f_ref)});
      f.row({"completeness_gap", fmt6(gap)});
      f.row({"completeness_relative_gap", denom > 0.0 ? fmt6(gap / denom) : "nan"});
      f.row({"n_samples", std::to_string(n_samples)});
    }
    m.add_file(run, path, "metrics");
    log("attribution completeness gap " + fmt6(gap) + " (f(x) - mean f(ref) = " + fmt6(fx - f_ref) + ")");
  });
}

void cmd_sweep_imbalance(const exp::ExperimentConfig& config, const fs::path& out) {
  recorded(out, "sweep-imbalance", config.hash(), [&](exp::Manifest& m, exp::RunRecord& run) {
    for (int s = 0; s < config.sweep.seeds; ++s) run.seeds.push_back(config.replicate_seed(s));
    const auto rows = run_sweep(config);
    {
      const fs::path path = out / "sweep.csv";
      CsvFile f(path, "ratio,target_auroc,probe_auroc,seed");
      for (const auto& r : rows) f.row({fmt6(r.ratio), fmt6(r.target_auroc), fmt6(r.probe_auroc), std::to_string(r.seed)});
      m.add_file(run, path, "metrics");
    }
    std::vector<double> tgt, probe;
    {
      const fs::path path = out / "sweep_mean.csv";
      CsvFile f(path, "ratio,target_auroc,probe_auroc");
      for (double ratio : config.sweep.ratios) {
        std::vector<double> t, p;
        for (const auto& r : rows) {
          if (r.ratio == ratio) {
            t.push_back(r.target_auroc);
            p.push_back(r.probe_auroc);
          }
        }
        tgt.push_back(mean_of(t));
        probe.push_back(mean_of(p));
        f.row({fmt6(ratio), fmt6(tgt.back()), fmt6(probe.back())});
      }
      m.add_file(run, path, "metrics");
    }
    const bool tgt_ok = trend_holds(tgt, false);
    const bool probe_ok = trend_holds(probe, true);
    write_checks(out / "checks_sweep.csv",
                 {{"target_auroc_non_increasing", tgt_ok, tgt.back() - tgt.front(), "<=1 violation of <=0.01"},
                  {"probe_auroc_non_decreasing", probe_ok, probe.back() - probe.front(), "<=1 violation of <=0.01"}});
    m.add_file(run, out / "checks_sweep.csv", "checks");
  });
}

ReportResult cmd_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw std::runtime_error("run directory " + run_dir.string() + " does not exist");
  if (!fs::exists(run_dir / "manifest.json")) {
    throw std::runtime_error("no manifest.json in " + run_dir.string() + "; nothing to report");
  }
  auto manifest = exp::Manifest::load(run_dir);
  ReportResult result;
  std::vector<std::vector<std::string>> summary;  // file,row,record
  std::vector<std::string> failed;
  for (const auto& entry : manifest.files()) {
    if (entry.kind != "metrics" && entry.kind != "checks") continue;
    std::ifstream in(run_dir / entry.path, std::ios::binary);
    if (!in) throw std::runtime_error("manifest lists " + entry.path + " but it cannot be read");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(entry.path + " is empty");
    const auto header = split_csv_line(line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != header.size()) throw std::runtime_error(entry.path + ": row has wrong column count");
      std::string record;
      for (std::size_t c = 0; c < cells.size(); ++c) record += (c ? ";" : "") + header[c] + "=" + cells[c];
      summary.push_back({entry.path, std::to_string(row++), record});
      if (entry.kind == "checks") {
        ++result.checks;
        if (cells.size() < 2 || cells[1] != "1") {
          ++result.failed_checks;
          failed.push_back(entry.path + ": " + cells[0]);
        }
      }
    }
  }
  result.rows = summary.size();
  {
    CsvFile f(run_dir / "summary.csv", "file,row,record");
    for (const auto& s : summary) f.row(s);
  }
  {
    std::ofstream txt(run_dir / "summary.txt", std::ios::binary);
    txt << "deconf " << exp::software_version() << " run summary\n";
    txt << "manifest complete: " << (manifest.complete() ? "yes" : "no") << "\n";
    std::string current;
    for (const auto& s : summary) {
      if (s[0] != current) {
        current = s[0];
        txt << "\n== " << current << "\n";
      }
      txt << "  " << s[2] << "\n";
    }
    txt << "\nchecks: " << result.checks - result.failed_checks << "/" << result.checks << " passed\n";
    for (const auto& f : failed) txt << "  FAILED " << f << "\n";
  }
  // Re-running the report replaces its own manifest entry instead of stacking.
  manifest.drop_runs("report");
  exp::RunRecord& run = manifest.begin_run("report", "");
  manifest.add_file(run, run_dir / "summary.csv", "summary");
  manifest.add_file(run, run_dir / "summary.txt", "summary");
  run.complete = true;
  manifest.save();
  return result;
}

}  // namespace deconf::cmd
