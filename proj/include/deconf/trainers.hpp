#pragma once

// Training strategies for a confounder-robust classifier: plain ERM, adversarial
// deconfounding against a score-reading adversary, instance weighting, matched
// subsampling and covariate inclusion. All of them share one early-stopping
// protocol (decay the learning rate on every non-improving validation epoch,
// stop after `patience_epochs` non-improving epochs in a row, keep the best).

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deconf/dataset.hpp"
#include "deconf/net.hpp"

namespace deconf::train {

enum class Method { kStandard, kAdversarial, kInstanceWeighting, kMatching, kCovariate };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
  double initial_lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 128;
  double lr_decay_factor = 10.0;
  int patience_epochs = 3;
  double val_fraction = 0.05;
  int max_epochs = 30;
  std::vector<int> hidden_layers{64, 32};
  std::uint64_t seed = 0;

  void validate() const;
  nn::NetworkSpec classifier_spec(int input_dim) const;
  nn::SgdHyper sgd() const { return {momentum, weight_decay}; }
};

struct AdvConfig {
  double lambda_weight = 1.0;
  nn::NetworkSpec adversary_spec{{1, 32, 32, 32, 1}, nn::Activation::kRelu, nn::Activation::kSigmoid};
  int adversary_pretrain_epochs = 1;
  int joint_epochs = 200;
  double adversary_lr = 1e-2;
  NuisanceKind nuisance_kind = NuisanceKind::kBinary;

  // Defaults with the output head matched to the nuisance: sigmoid + BCE for a
  // binary nuisance, linear + MSE for a continuous one.
  static AdvConfig for_kind(NuisanceKind kind);
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;  // rate used during this epoch
  bool improved = false;
};

struct JointRecord {
  int joint_epoch = 0;
  double adversary_loss = 0.0;  // mean training loss of the adversary epoch
  double val_bce = 0.0;         // classifier validation BCE after its step
  double probe_metric = 0.0;    // adversary AUROC (binary) or R^2 (continuous) on validation
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  int stop_epoch = 0;
  std::vector<JointRecord> joint;
  double pretrained_probe_metric = 0.0;
};

// Score-reading adversary. Inputs are the classifier probability standardized
// with statistics frozen at pretraining; continuous targets are standardized too.
struct Adversary {
  nn::NetworkSpec spec;
  nn::NetworkParams params;
  NuisanceKind kind = NuisanceKind::kBinary;
  double input_mean = 0.0;
  double input_scale = 1.0;
  double target_mean = 0.0;
  double target_scale = 1.0;

  Eigen::MatrixXd standardize_inputs(const Eigen::VectorXd& scores) const;
  std::vector<double> targets(std::span<const double> nuisance) const;
  // Probability of V = 1, or the predicted nuisance in original units.
  std::vector<double> predict(const Eigen::VectorXd& scores) const;
};

// Covariate head: logit = W h + b + weight * V, with V := train_mean at evaluation.
struct CovariateHead {
  double weight = 0.0;
  double train_mean = 0.0;
};

struct TrainedModel {
  Method method = Method::kStandard;
  nn::NetworkSpec spec;
  nn::NetworkParams params;
  std::optional<Adversary> adversary;
  std::optional<CovariateHead> covariate;
  TrainingReport report;
  std::string config_hash;
};

struct InstanceWeightTable {
  std::array<std::array<std::int64_t, 2>, 2> counts{};        // [y][v]
  std::array<double, 2> p_y{};                                 // P^(Y = y)
  std::array<std::array<double, 2>, 2> p_y_given_v{};          // [y][v]
  std::array<std::array<double, 2>, 2> weight{};               // [y][v] = P^(y) / P^(y|v)

  double weight_for(int y, double v) const {
    return weight[static_cast<std::size_t>(y)][v == 1.0 ? 1 : 0];
  }
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Splits on group_id. The number of validation groups is round(val_fraction * G),
// clamped to [1, G - 1].
std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double val_fraction,
                                            std::uint64_t seed);

TrainedModel train_standard(const Dataset& dataset, const TrainConfig& config);

// Fits a fresh score -> nuisance network. Input standardization statistics come
// from `scores`; continuous targets are standardized the same way.
Adversary fit_score_adversary(const nn::NetworkSpec& spec, NuisanceKind kind,
                              std::span<const double> scores, std::span<const double> nuisance,
                              int epochs, double learning_rate, int batch_size, std::uint64_t seed);

Adversary pretrain_adversary(const TrainedModel& model, const Dataset& dataset,
                             const AdvConfig& adv_config, std::uint64_t seed);

TrainedModel train_adversarial(const Dataset& dataset, const TrainConfig& config,
                               const AdvConfig& adv_config);

InstanceWeightTable compute_instance_weights(const Dataset& dataset);

// Draws indices with replacement, P(i) proportional to weights[i].
class WeightedSampler {
 public:
  explicit WeightedSampler(std::span<const double> weights);
  std::size_t draw(std::mt19937_64& rng) const;
  std::size_t size() const { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
};

TrainedModel train_instance_weighted(const Dataset& dataset, const TrainConfig& config);

// Deletes negatives from the subgroup with the lower positive rate until both
// subgroups share the same base rate (up to rounding of a single sample).
Dataset match_subsample(const Dataset& dataset, std::uint64_t seed);

TrainedModel train_matching(const Dataset& dataset, const TrainConfig& config);

TrainedModel train_covariate(const Dataset& dataset, const TrainConfig& config);

std::vector<double> eval_covariate(const TrainedModel& model, const Dataset& dataset);

// Scores for any trained model; covariate models are evaluated with V at its training mean.
std::vector<double> predict_scores(const TrainedModel& model, const Dataset& dataset);

// Last-hidden-layer activations, one row per sample.
Eigen::MatrixXd hidden_embedding(const TrainedModel& model, const Dataset& dataset);

TrainedModel train(Method method, const Dataset& dataset, const TrainConfig& config,
                   const AdvConfig& adv_config);

// One minibatch update of the classifier. `offset` feeds a covariate head.
double classifier_step(nn::NetworkParams& params, const nn::NetworkSpec& spec,
                       nn::OptimizerState& state, const nn::SgdHyper& hyper,
                       const Eigen::MatrixXd& x, std::span<const double> labels);

// One minibatch update of the classifier on BCE(y) - lambda * L_adversary(v | s),
// with the adversary frozen. Returns the classifier BCE on the batch.
double adversarial_classifier_step(nn::NetworkParams& params, const nn::NetworkSpec& spec,
                                   nn::OptimizerState& state, const nn::SgdHyper& hyper,
                                   const Eigen::MatrixXd& x, std::span<const double> labels,
                                   std::span<const double> nuisance, const Adversary& adversary,
                                   double lambda_weight);

}  // namespace deconf::train
