#pragma once

// Synthetic data with the causal structure Y -> A -> X, Y -> V -> X.
//
// Signal dimensions carry the label (the anatomical features), marker
// dimensions carry the nuisance (the view imprint, e.g. a "PORTABLE" marker),
// every other dimension is pure noise. The Y-V association is the only thing
// allowed to differ between a source and a target domain.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deconf/dataset.hpp"

namespace deconf::synth {

struct GenConfig {
  std::size_t n_samples = 20000;
  int dim = 32;
  double p_v = 0.5;                                     // P(V = 1)
  std::array<double, 2> base_rate_given_v{0.021, 0.039};  // P(Y=1 | V=0), P(Y=1 | V=1)
  double signal_strength = 0.25;
  double marker_strength = 2.0;
  double noise_sd = 1.0;
  std::vector<int> signal_dims{0, 1, 2, 3};
  std::vector<int> marker_dims{4, 5};
  std::uint64_t seed = 0;
  int aux_labels = 0;

  void validate() const;
  // Stable across runs and platforms; used to tag generated data.
  std::string hash() const;
};

struct ImbalanceCounts {
  std::int64_t pos_v0 = 0;
  std::int64_t neg_v0 = 0;
  std::int64_t pos_v1 = 0;
  std::int64_t neg_v1 = 0;

  std::int64_t total() const { return pos_v0 + neg_v0 + pos_v1 + neg_v1; }
  bool operator==(const ImbalanceCounts&) const = default;
};

class InfeasibleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Dataset generate(const GenConfig& config);

// Total positives P = overall_rate * 2 * n_per_view, pos_v0 = round(P / (1 + ratio)),
// pos_v1 = P - pos_v0.
ImbalanceCounts engineered_imbalance(double ratio, std::int64_t n_per_view, double overall_rate);

// Exactly the requested (Y, V) cell counts, features drawn as in `generate`.
// The n_samples, p_v and base-rate fields of `config` are ignored.
Dataset realize_counts(const ImbalanceCounts& counts, const GenConfig& config);

// Throws std::invalid_argument unless the two configs share the X | (Y, V) mechanism.
std::pair<Dataset, Dataset> make_source_target_pair(const GenConfig& source_cfg,
                                                    const GenConfig& target_cfg);

inline constexpr double kAgeMean = 60.0;
inline constexpr double kAgeSd = 18.0;
inline constexpr double kAgeMin = 18.0;
inline constexpr double kAgeMax = 100.0;

// Age-valued nuisance: V ~ N(60, 18) clipped to [18, 100]. With z = (V - 60) / 18,
// marker dims = z * marker_strength + noise and
// P(Y=1 | V) = sigmoid(logit(base) + age_effect * z), where base is the
// p_v-weighted mean of `base_rate_given_v`.
Dataset continuous_nuisance_variant(const GenConfig& config, double age_effect);

// P(Y = 1 | age) under `continuous_nuisance_variant`.
double continuous_base_rate(const GenConfig& config, double age_effect, double age);

}  // namespace deconf::synth
