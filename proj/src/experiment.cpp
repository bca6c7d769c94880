#include "deconf/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "deconf/hash.hpp"

namespace deconf::exp {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that any
// leftover key can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("field '" + name(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!j_.contains(key)) throw ConfigError("missing required field '" + name(key) + "'");
    get(key, out);
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), name(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown field '" + name(key) + "'");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_gen(Section& s, synth::GenConfig& g) {
  std::int64_t n = static_cast<std::int64_t>(g.n_samples);
  s.get("n_samples", n);
  if (n < 0) throw ConfigError("field '" + s.name("n_samples") + "' must be non-negative");
  g.n_samples = static_cast<std::size_t>(n);
  s.get("dim", g.dim);
  s.get("p_v", g.p_v);
  s.get("base_rate_given_v", g.base_rate_given_v);
  s.get("signal_strength", g.signal_strength);
  s.get("marker_strength", g.marker_strength);
  s.get("noise_sd", g.noise_sd);
  s.get("signal_dims", g.signal_dims);
  s.get("marker_dims", g.marker_dims);
  s.get("seed", g.seed);
  s.get("aux_labels", g.aux_labels);
  s.finish();
}

json gen_json(const synth::GenConfig& g) {
  return {{"n_samples", g.n_samples},         {"dim", g.dim},
          {"p_v", g.p_v},                     {"base_rate_given_v", g.base_rate_given_v},
          {"signal_strength", g.signal_strength}, {"marker_strength", g.marker_strength},
          {"noise_sd", g.noise_sd},           {"signal_dims", g.signal_dims},
          {"marker_dims", g.marker_dims},     {"seed", g.seed},
          {"aux_labels", g.aux_labels}};
}

template <typename F>
void wrap_validate(const std::string& what, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

std::uint64_t ExperimentConfig::replicate_seed(int i) const {
  return master_seed + static_cast<std::uint64_t>(i) * 10007ULL;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["generation"] = {{"nuisance", deconf::to_string(generation.nuisance)},
                     {"age_effect", generation.age_effect},
                     {"source", gen_json(generation.source)},
                     {"target", gen_json(generation.target)}};
  const auto& t = trainer.train;
  const auto& a = trainer.adversarial;
  std::vector<int> adv_hidden(a.adversary_spec.layer_sizes.begin() + 1, a.adversary_spec.layer_sizes.end() - 1);
  j["trainer"] = {{"method", train::to_string(trainer.method)},
                  {"source_test_fraction", trainer.source_test_fraction},
                  {"train",
                   {{"initial_lr", t.initial_lr},
                    {"momentum", t.momentum},
                    {"weight_decay", t.weight_decay},
                    {"batch_size", t.batch_size},
                    {"lr_decay_factor", t.lr_decay_factor},
                    {"patience_epochs", t.patience_epochs},
                    {"val_fraction", t.val_fraction},
                    {"max_epochs", t.max_epochs},
                    {"hidden_layers", t.hidden_layers}}},
                  {"adversarial",
                   {{"lambda_weight", a.lambda_weight},
                    {"hidden_layers", adv_hidden},
                    {"pretrain_epochs", a.adversary_pretrain_epochs},
                    {"joint_epochs", a.joint_epochs},
                    {"adversary_lr", a.adversary_lr}}}};
  const auto& d = diagnostics;
  j["diagnostics"] = {{"probe", d.probe},
                      {"orthogonality", d.orthogonality},
                      {"ks", d.ks},
                      {"export_scores", d.export_scores},
                      {"probe_epochs", d.probe_epochs},
                      {"probe_lr", d.probe_lr},
                      {"ks_bin_edges", d.ks_bin_edges}};
  j["sweep"] = {{"ratios", sweep.ratios},
                {"n_per_view", sweep.n_per_view},
                {"overall_rate", sweep.overall_rate},
                {"seeds", sweep.seeds}};
  j["replicates"] = replicates;
  j["output_dir"] = output_dir;
  j["master_seed"] = master_seed;
  return j.dump(2);
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json()); }

void ExperimentConfig::validate() const {
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  wrap_validate("generation.source", [&] { generation.source.validate(); });
  wrap_validate("generation.target", [&] { generation.target.validate(); });
  wrap_validate("trainer.train", [&] { trainer.train.validate(); });
  wrap_validate("trainer.adversarial", [&] { trainer.adversarial.validate(); });
  if (!(trainer.source_test_fraction > 0.0 && trainer.source_test_fraction < 1.0)) {
    throw ConfigError("trainer.source_test_fraction must be in (0, 1)");
  }
  if (diagnostics.probe_epochs < 1) throw ConfigError("diagnostics.probe_epochs must be >= 1");
  if (!(diagnostics.probe_lr > 0.0)) throw ConfigError("diagnostics.probe_lr must be positive");
  if (!std::is_sorted(diagnostics.ks_bin_edges.begin(), diagnostics.ks_bin_edges.end())) {
    throw ConfigError("diagnostics.ks_bin_edges must be sorted");
  }
  if (sweep.ratios.empty()) throw ConfigError("sweep.ratios must not be empty");
  for (double r : sweep.ratios) {
    if (!(r > 0.0)) throw ConfigError("sweep ratios must be positive");
  }
  if (sweep.n_per_view < 1) throw ConfigError("sweep.n_per_view must be >= 1");
  if (!(sweep.overall_rate > 0.0 && sweep.overall_rate < 1.0)) {
    throw ConfigError("sweep.overall_rate must be in (0, 1)");
  }
  if (sweep.seeds < 1) throw ConfigError("sweep.seeds must be >= 1");
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "");
  top.get("replicates", c.replicates);
  top.get("output_dir", c.output_dir);
  top.get("master_seed", c.master_seed);

  if (!top.has("generation")) throw ConfigError("missing required field 'generation'");
  {
    Section gen = top.child("generation");
    std::string nuisance = "binary";
    gen.get("nuisance", nuisance);
    try {
      c.generation.nuisance = nuisance_kind_from_string(nuisance);
    } catch (const std::exception&) {
      throw ConfigError("field 'generation.nuisance' must be 'binary' or 'continuous'");
    }
    gen.get("age_effect", c.generation.age_effect);
    if (!gen.has("source")) throw ConfigError("missing required field 'generation.source'");
    {
      Section src = gen.child("source");
      std::int64_t n = 0;
      src.require("n_samples", n);
      c.generation.source.seed = c.master_seed;
      read_gen(src, c.generation.source);
    }
    c.generation.target = c.generation.source;
    c.generation.target.seed = c.generation.source.seed + 1;
    if (c.generation.nuisance == NuisanceKind::kBinary) {
      std::swap(c.generation.target.base_rate_given_v[0], c.generation.target.base_rate_given_v[1]);
    }
    if (gen.has("target")) {
      Section tgt = gen.child("target");
      read_gen(tgt, c.generation.target);
    }
    gen.finish();
  }

  if (!top.has("trainer")) throw ConfigError("missing required field 'trainer'");
  {
    Section tr = top.child("trainer");
    std::string method;
    tr.require("method", method);
    try {
      c.trainer.method = train::method_from_string(method);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("field 'trainer.method': ") + e.what());
    }
    tr.get("source_test_fraction", c.trainer.source_test_fraction);
    if (tr.has("train")) {
      Section t = tr.child("train");
      auto& tc = c.trainer.train;
      t.get("initial_lr", tc.initial_lr);
      t.get("momentum", tc.momentum);
      t.get("weight_decay", tc.weight_decay);
      t.get("batch_size", tc.batch_size);
      t.get("lr_decay_factor", tc.lr_decay_factor);
      t.get("patience_epochs", tc.patience_epochs);
      t.get("val_fraction", tc.val_fraction);
      t.get("max_epochs", tc.max_epochs);
      t.get("hidden_layers", tc.hidden_layers);
      t.finish();
    }
    c.trainer.adversarial = train::AdvConfig::for_kind(c.generation.nuisance);
    if (tr.has("adversarial")) {
      Section a = tr.child("adversarial");
      auto& ac = c.trainer.adversarial;
      a.get("lambda_weight", ac.lambda_weight);
      std::vector<int> hidden(ac.adversary_spec.layer_sizes.begin() + 1, ac.adversary_spec.layer_sizes.end() - 1);
      a.get("hidden_layers", hidden);
      ac.adversary_spec.layer_sizes = {1};
      ac.adversary_spec.layer_sizes.insert(ac.adversary_spec.layer_sizes.end(), hidden.begin(), hidden.end());
      ac.adversary_spec.layer_sizes.push_back(1);
      a.get("pretrain_epochs", ac.adversary_pretrain_epochs);
      a.get("joint_epochs", ac.joint_epochs);
      a.get("adversary_lr", ac.adversary_lr);
      a.finish();
    }
    tr.finish();
  }

  if (top.has("diagnostics")) {
    Section d = top.child("diagnostics");
    auto& dc = c.diagnostics;
    d.get("probe", dc.probe);
    d.get("orthogonality", dc.orthogonality);
    d.get("ks", dc.ks);
    d.get("export_scores", dc.export_scores);
    d.get("probe_epochs", dc.probe_epochs);
    d.get("probe_lr", dc.probe_lr);
    d.get("ks_bin_edges", dc.ks_bin_edges);
    d.finish();
  }
  if (top.has("sweep")) {
    Section s = top.child("sweep");
    s.get("ratios", c.sweep.ratios);
    s.get("n_per_view", c.sweep.n_per_view);
    s.get("overall_rate", c.sweep.overall_rate);
    s.get("seeds", c.sweep.seeds);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::pair<Dataset, Dataset> make_datasets(const ExperimentConfig& config) {
  const auto& g = config.generation;
  if (g.nuisance == NuisanceKind::kBinary) return synth::make_source_target_pair(g.source, g.target);
  Dataset src = synth::continuous_nuisance_variant(g.source, g.age_effect);
  Dataset tgt = synth::continuous_nuisance_variant(g.target, -g.age_effect);
  src.set_domain(Domain::kSource);
  tgt.set_domain(Domain::kTarget);
  return {std::move(src), std::move(tgt)};
}

Manifest Manifest::load_or_create(const std::filesystem::path& run_dir) {
  if (std::filesystem::exists(run_dir / "manifest.json")) return load(run_dir);
  Manifest m;
  m.run_dir_ = run_dir;
  return m;
}

Manifest Manifest::load(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("no manifest at " + path.string());
  Manifest m;
  m.run_dir_ = run_dir;
  try {
    const json j = json::parse(in);
    for (const auto& f : j.at("files")) m.files_.push_back({f.at("path"), f.at("kind")});
    for (const auto& r : j.at("runs")) {
      RunRecord rec;
      rec.command = r.at("command");
      rec.config_hash = r.at("config_hash");
      rec.seeds = r.at("seeds").get<std::vector<std::uint64_t>>();
      rec.files = r.at("files").get<std::vector<std::string>>();
      rec.seconds = r.at("seconds");
      rec.complete = r.at("complete");
      rec.error = r.value("error", "");
      m.runs_.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest " + path.string() + ": " + e.what());
  }
  return m;
}

bool Manifest::complete() const {
  return std::all_of(runs_.begin(), runs_.end(), [](const RunRecord& r) { return r.complete; });
}

RunRecord& Manifest::begin_run(const std::string& command, const std::string& config_hash) {
  runs_.push_back({command, config_hash, {}, {}, 0.0, false, ""});
  return runs_.back();
}

void Manifest::drop_runs(const std::string& command) {
  std::erase_if(runs_, [&](const RunRecord& r) { return r.command == command; });
}

void Manifest::add_file(RunRecord& run, const std::filesystem::path& path, const std::string& kind) {
  const std::string rel = std::filesystem::relative(path, run_dir_).generic_string();
  if (std::find(run.files.begin(), run.files.end(), rel) == run.files.end()) run.files.push_back(rel);
  const auto it = std::find_if(files_.begin(), files_.end(), [&](const FileEntry& f) { return f.path == rel; });
  if (it == files_.end()) {
    files_.push_back({rel, kind});
  } else {
    it->kind = kind;
  }
}

void Manifest::save() const {
  json files = json::array();
  for (const auto& f : files_) files.push_back({{"path", f.path}, {"kind", f.kind}});
  json runs = json::array();
  for (const auto& r : runs_) {
    json jr = {{"command", r.command}, {"config_hash", r.config_hash}, {"seeds", r.seeds},
               {"files", r.files},     {"seconds", r.seconds},         {"complete", r.complete}};
    if (!r.error.empty()) jr["error"] = r.error;
    runs.push_back(std::move(jr));
  }
  const json j = {{"version", software_version()}, {"complete", complete()}, {"files", files}, {"runs", runs}};
  std::filesystem::create_directories(run_dir_);
  const auto tmp = run_dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest in " + run_dir_.string());
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, run_dir_ / "manifest.json");
}

std::string software_version() { return DECONF_VERSION; }

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace deconf::exp
