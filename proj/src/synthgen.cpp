#include "deconf/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "deconf/hash.hpp"

namespace deconf::synth {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class FeatureSampler {
 public:
  FeatureSampler(const GenConfig& config, std::mt19937_64& rng)
      : config_(config), rng_(rng), noise_(0.0, 1.0) {
    role_.assign(static_cast<std::size_t>(config.dim), Role::kNoise);
    for (int j : config.signal_dims) role_[static_cast<std::size_t>(j)] = Role::kSignal;
    for (int j : config.marker_dims) role_[static_cast<std::size_t>(j)] = Role::kMarker;
  }

  // `marker_level` is V for a binary nuisance and the standardized age otherwise.
  std::vector<double> draw(int label, double marker_level) {
    std::vector<double> x(role_.size());
    for (std::size_t j = 0; j < role_.size(); ++j) {
      double mean = 0.0;
      if (role_[j] == Role::kSignal) mean = label * config_.signal_strength;
      if (role_[j] == Role::kMarker) mean = marker_level * config_.marker_strength;
      x[j] = mean + config_.noise_sd * noise_(rng_);
    }
    return x;
  }

  std::vector<int> draw_aux(int label) {
    std::vector<int> aux(static_cast<std::size_t>(config_.aux_labels));
    for (auto& a : aux) a = unit_(rng_) < 0.2 ? 1 - label : label;
    return aux;
  }

 private:
  enum class Role { kNoise, kSignal, kMarker };
  const GenConfig& config_;
  std::mt19937_64& rng_;
  std::normal_distribution<double> noise_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::vector<Role> role_;
};

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

void GenConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("dim must be positive");
  if (!is_probability(p_v)) throw std::invalid_argument("p_v must be in [0, 1]");
  for (double b : base_rate_given_v) {
    if (!is_probability(b)) throw std::invalid_argument("base rates must be in [0, 1]");
  }
  if (!(signal_strength >= 0.0) || !(marker_strength >= 0.0) || !(noise_sd >= 0.0)) {
    throw std::invalid_argument("strengths and noise_sd must be non-negative");
  }
  if (aux_labels < 0) throw std::invalid_argument("aux_labels must be non-negative");
  std::set<int> seen;
  for (const auto* dims : {&signal_dims, &marker_dims}) {
    for (int j : *dims) {
      if (j < 0 || j >= dim) throw std::invalid_argument("feature index out of range");
      if (!seen.insert(j).second) {
        throw std::invalid_argument("signal and marker dims must be disjoint");
      }
    }
  }
}

std::string GenConfig::hash() const {
  std::ostringstream ss;
  ss << "n=" << n_samples << ";d=" << dim << ";pv=" << fmt(p_v) << ";b0=" << fmt(base_rate_given_v[0])
     << ";b1=" << fmt(base_rate_given_v[1]) << ";sig=" << fmt(signal_strength)
     << ";mark=" << fmt(marker_strength) << ";noise=" << fmt(noise_sd) << ";sd=";
  for (int j : signal_dims) ss << j << ' ';
  ss << ";md=";
  for (int j : marker_dims) ss << j << ' ';
  ss << ";seed=" << seed << ";aux=" << aux_labels;
  return fnv1a_hex(ss.str());
}

Dataset generate(const GenConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FeatureSampler sampler(config, rng);
  Dataset ds(config.dim, NuisanceKind::kBinary, config.aux_labels);
  ds.meta = {config.hash(), config.seed};
  ds.reserve(config.n_samples);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    Sample s;
    const int v = unit(rng) < config.p_v ? 1 : 0;
    s.label = unit(rng) < config.base_rate_given_v[static_cast<std::size_t>(v)] ? 1 : 0;
    s.nuisance = v;
    s.features = sampler.draw(s.label, v);
    s.aux_labels = sampler.draw_aux(s.label);
    s.group_id = static_cast<std::int64_t>(i);
    ds.push_back(s);
  }
  return ds;
}

ImbalanceCounts engineered_imbalance(double ratio, std::int64_t n_per_view, double overall_rate) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw InfeasibleError("ratio must be positive");
  if (n_per_view < 1) throw InfeasibleError("n_per_view must be positive");
  if (!is_probability(overall_rate)) throw InfeasibleError("overall rate must be in [0, 1]");
  const auto positives =
      static_cast<std::int64_t>(std::llround(overall_rate * 2.0 * static_cast<double>(n_per_view)));
  const auto pos_v0 = static_cast<std::int64_t>(std::llround(static_cast<double>(positives) / (1.0 + ratio)));
  const std::int64_t pos_v1 = positives - pos_v0;
  if (pos_v0 > n_per_view || pos_v1 > n_per_view) {
    throw InfeasibleError("positives exceed subgroup size for ratio " + fmt(ratio));
  }
  return {pos_v0, n_per_view - pos_v0, pos_v1, n_per_view - pos_v1};
}

Dataset realize_counts(const ImbalanceCounts& counts, const GenConfig& config) {
  config.validate();
  if (counts.pos_v0 < 0 || counts.neg_v0 < 0 || counts.pos_v1 < 0 || counts.neg_v1 < 0) {
    throw InfeasibleError("cell counts must be non-negative");
  }
  if (counts.total() == 0) throw InfeasibleError("cell counts are all zero");
  std::mt19937_64 rng(config.seed);
  std::vector<std::pair<int, int>> cells;  // (label, view)
  cells.reserve(static_cast<std::size_t>(counts.total()));
  cells.insert(cells.end(), static_cast<std::size_t>(counts.pos_v0), {1, 0});
  cells.insert(cells.end(), static_cast<std::size_t>(counts.neg_v0), {0, 0});
  cells.insert(cells.end(), static_cast<std::size_t>(counts.pos_v1), {1, 1});
  cells.insert(cells.end(), static_cast<std::size_t>(counts.neg_v1), {0, 1});
  std::shuffle(cells.begin(), cells.end(), rng);

  FeatureSampler sampler(config, rng);
  Dataset ds(config.dim, NuisanceKind::kBinary, config.aux_labels);
  ds.meta = {config.hash(), config.seed};
  ds.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    Sample s;
    s.label = cells[i].first;
    s.nuisance = cells[i].second;
    s.features = sampler.draw(s.label, s.nuisance);
    s.aux_labels = sampler.draw_aux(s.label);
    s.group_id = static_cast<std::int64_t>(i);
    ds.push_back(s);
  }
  return ds;
}

std::pair<Dataset, Dataset> make_source_target_pair(const GenConfig& source_cfg,
                                                    const GenConfig& target_cfg) {
  if (source_cfg.dim != target_cfg.dim || source_cfg.signal_dims != target_cfg.signal_dims ||
      source_cfg.marker_dims != target_cfg.marker_dims ||
      source_cfg.signal_strength != target_cfg.signal_strength ||
      source_cfg.marker_strength != target_cfg.marker_strength ||
      source_cfg.noise_sd != target_cfg.noise_sd) {
    throw std::invalid_argument(
        "source and target must share dim, signal/marker dims, strengths and noise");
  }
  Dataset source = generate(source_cfg);
  Dataset target = generate(target_cfg);
  source.set_domain(Domain::kSource);
  target.set_domain(Domain::kTarget);
  return {std::move(source), std::move(target)};
}

double continuous_base_rate(const GenConfig& config, double age_effect, double age) {
  const double base = (1.0 - config.p_v) * config.base_rate_given_v[0] +
                      config.p_v * config.base_rate_given_v[1];
  if (!(base > 0.0 && base < 1.0)) {
    throw std::invalid_argument("continuous variant needs a base rate strictly inside (0, 1)");
  }
  const double z = (age - kAgeMean) / kAgeSd;
  return 1.0 / (1.0 + std::exp(-(logit(base) + age_effect * z)));
}

Dataset continuous_nuisance_variant(const GenConfig& config, double age_effect) {
  config.validate();
  if (!std::isfinite(age_effect)) throw std::invalid_argument("age_effect must be finite");
  continuous_base_rate(config, age_effect, kAgeMean);  // validates the base rate
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> age_dist(kAgeMean, kAgeSd);
  FeatureSampler sampler(config, rng);
  Dataset ds(config.dim, NuisanceKind::kContinuous, config.aux_labels);
  ds.meta = {config.hash(), config.seed};
  ds.reserve(config.n_samples);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    Sample s;
    s.nuisance = std::clamp(age_dist(rng), kAgeMin, kAgeMax);
    s.label = unit(rng) < continuous_base_rate(config, age_effect, s.nuisance) ? 1 : 0;
    s.features = sampler.draw(s.label, (s.nuisance - kAgeMean) / kAgeSd);
    s.aux_labels = sampler.draw_aux(s.label);
    s.group_id = static_cast<std::int64_t>(i);
    ds.push_back(s);
  }
  return ds;
}

}  // namespace deconf::synth
