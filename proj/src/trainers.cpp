#include "deconf/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include "deconf/metrics.hpp"

namespace deconf::train {

namespace {

enum Stream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kSplitStream = 3,
  kAdversaryInitStream = 4,
  kAdversaryShuffleStream = 5,
  kMatchStream = 6,
  kJointStream = 7,
};

using Batches = std::vector<std::vector<std::size_t>>;
using BatchPlan = std::function<Batches(std::mt19937_64&)>;

Batches shuffled_batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Batches out;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += b) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  }
  return out;
}

std::vector<double> gather(const std::vector<double>& values, std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(values[i]);
  return out;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void require_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) throw std::domain_error(std::string("non-finite loss in ") + where);
}

Eigen::VectorXd classifier_scores(const nn::NetworkParams& params, const nn::NetworkSpec& spec,
                                  const Dataset& data, const Eigen::VectorXd* offset = nullptr) {
  const Eigen::MatrixXd x = data.features();
  return nn::predict(params, spec, x, offset);
}

Eigen::VectorXd covariate_offset(double weight, std::span<const double> nuisance) {
  Eigen::VectorXd off(static_cast<Eigen::Index>(nuisance.size()));
  for (std::size_t i = 0; i < nuisance.size(); ++i) {
    off(static_cast<Eigen::Index>(i)) = weight * nuisance[i];
  }
  return off;
}

struct ClassifierFit {
  nn::NetworkParams params;
  std::optional<double> covariate_weight;
};

double validation_bce(const ClassifierFit& fit, const nn::NetworkSpec& spec, const Dataset& val) {
  Eigen::VectorXd scores;
  if (fit.covariate_weight) {
    const Eigen::VectorXd off = covariate_offset(*fit.covariate_weight, val.nuisance());
    scores = classifier_scores(fit.params, spec, val, &off);
  } else {
    scores = classifier_scores(fit.params, spec, val);
  }
  return nn::bce_loss(to_std(scores), val.labels());
}

// Shared early-stopping loop.
TrainedModel fit_classifier(const Dataset& train_set, const Dataset& val, const TrainConfig& config,
                            Method method, const BatchPlan& plan, bool with_covariate) {
  const nn::NetworkSpec spec = config.classifier_spec(train_set.dim());
  ClassifierFit fit{nn::init_params(spec, derive_seed(config.seed, kInitStream)), std::nullopt};
  if (with_covariate) fit.covariate_weight = 0.0;
  double covariate_velocity = 0.0;
  auto state = nn::OptimizerState::for_params(fit.params, config.initial_lr);
  const auto hyper = config.sgd();
  std::mt19937_64 rng(derive_seed(config.seed, kShuffleStream));

  TrainedModel model;
  model.method = method;
  model.spec = spec;
  ClassifierFit best = fit;
  double best_loss = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const Batches batches = plan(rng);
    double loss_sum = 0.0;
    for (const auto& idx : batches) {
      const Eigen::MatrixXd x = train_set.feature_rows(idx);
      const auto y = gather(train_set.labels(), idx);
      double loss;
      if (with_covariate) {
        const auto v = gather(train_set.nuisance(), idx);
        const Eigen::VectorXd off = covariate_offset(*fit.covariate_weight, v);
        const auto trace = nn::forward(fit.params, spec, x, &off);
        loss = nn::bce_loss(to_std(trace.output().col(0)), y);
        const Eigen::MatrixXd delta = nn::output_delta(trace, spec, nn::LossKind::kBce, y);
        const auto grads = nn::backward_from_delta(trace, fit.params, spec, delta);
        double grad_w = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) grad_w += delta(static_cast<Eigen::Index>(i), 0) * v[i];
        nn::sgd_step(fit.params, grads, state, hyper);
        nn::sgd_step_scalar(*fit.covariate_weight, grad_w, covariate_velocity, state.learning_rate,
                            hyper, true);
      } else {
        loss = classifier_step(fit.params, spec, state, hyper, x, y);
      }
      require_finite(loss, "classifier training");
      loss_sum += loss;
    }
    const double val_loss = validation_bce(fit, spec, val);
    require_finite(val_loss, "validation");
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches.size()), val_loss,
                    state.learning_rate, val_loss < best_loss};
    model.report.epochs.push_back(rec);
    model.report.stop_epoch = epoch;
    if (rec.improved) {
      best_loss = val_loss;
      best = fit;
      bad_epochs = 0;
      model.report.best_epoch = epoch;
    } else {
      ++bad_epochs;
      state.learning_rate /= config.lr_decay_factor;
      if (bad_epochs >= config.patience_epochs) break;
    }
  }
  model.params = std::move(best.params);
  if (best.covariate_weight) {
    const auto& v = train_set.nuisance();
    model.covariate = CovariateHead{*best.covariate_weight,
                                    std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size())};
  }
  return model;
}

BatchPlan uniform_plan(std::size_t n, int batch_size) {
  return [n, batch_size](std::mt19937_64& rng) { return shuffled_batches(n, batch_size, rng); };
}

void require_labels(const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
}

nn::LossKind adversary_loss(NuisanceKind kind) {
  return kind == NuisanceKind::kBinary ? nn::LossKind::kBce : nn::LossKind::kMse;
}

double adversary_epoch(Adversary& adv, nn::OptimizerState& state, const nn::SgdHyper& hyper,
                       const Eigen::MatrixXd& inputs, const std::vector<double>& targets,
                       int batch_size, std::mt19937_64& rng) {
  const auto batches = shuffled_batches(targets.size(), batch_size, rng);
  const auto loss_kind = adversary_loss(adv.kind);
  double total = 0.0;
  for (const auto& idx : batches) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      x(static_cast<Eigen::Index>(r), 0) = inputs(static_cast<Eigen::Index>(idx[r]), 0);
    }
    const auto t = gather(targets, idx);
    const auto trace = nn::forward(adv.params, adv.spec, x);
    const auto out = to_std(trace.output().col(0));
    const double loss = loss_kind == nn::LossKind::kBce ? nn::bce_loss(out, t) : nn::mse_loss(out, t);
    require_finite(loss, "adversary training");
    total += loss;
    nn::sgd_step(adv.params, nn::backward(trace, adv.params, adv.spec, loss_kind, t), state, hyper);
  }
  return total / static_cast<double>(batches.size());
}

// AUROC of the adversary on a binary nuisance, R^2 on a continuous one.
double probe_metric(const Adversary& adv, const Eigen::VectorXd& scores,
                    std::span<const double> nuisance) {
  const auto pred = adv.predict(scores);
  if (adv.kind == NuisanceKind::kBinary) {
    try {
      return metrics::auroc(pred, nuisance);
    } catch (const metrics::DegenerateInputError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  }
  const double mean = std::accumulate(nuisance.begin(), nuisance.end(), 0.0) /
                      static_cast<double>(nuisance.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < nuisance.size(); ++i) {
    ss_res += (nuisance[i] - pred[i]) * (nuisance[i] - pred[i]);
    ss_tot += (nuisance[i] - mean) * (nuisance[i] - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN();
}

void require_binary_nuisance(const Dataset& dataset, const char* what) {
  if (dataset.nuisance_kind() != NuisanceKind::kBinary) {
    throw std::invalid_argument(std::string(what) + " requires a binary nuisance");
  }
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kStandard: return "standard";
    case Method::kAdversarial: return "adversarial";
    case Method::kInstanceWeighting: return "instance_weighting";
    case Method::kMatching: return "matching";
    case Method::kCovariate: return "covariate";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kStandard, Method::kAdversarial, Method::kInstanceWeighting,
                   Method::kMatching, Method::kCovariate}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown training method '" + s + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw std::invalid_argument("initial_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("lr_decay_factor must be positive");
  if (patience_epochs < 1) throw std::invalid_argument("patience_epochs must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must be in (0, 1)");
  }
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
  for (int h : hidden_layers) {
    if (h < 1) throw std::invalid_argument("hidden layer sizes must be positive");
  }
}

nn::NetworkSpec TrainConfig::classifier_spec(int input_dim) const {
  nn::NetworkSpec spec;
  spec.layer_sizes.push_back(input_dim);
  spec.layer_sizes.insert(spec.layer_sizes.end(), hidden_layers.begin(), hidden_layers.end());
  spec.layer_sizes.push_back(1);
  spec.output_activation = nn::Activation::kSigmoid;
  spec.validate();
  return spec;
}

AdvConfig AdvConfig::for_kind(NuisanceKind kind) {
  AdvConfig c;
  c.nuisance_kind = kind;
  c.adversary_spec.output_activation =
      kind == NuisanceKind::kBinary ? nn::Activation::kSigmoid : nn::Activation::kLinear;
  return c;
}

void AdvConfig::validate() const {
  if (!(lambda_weight >= 0.0)) throw std::invalid_argument("lambda_weight must be non-negative");
  adversary_spec.validate();
  if (adversary_spec.input_dim() != 1 || adversary_spec.output_dim() != 1) {
    throw std::invalid_argument("adversary must map a scalar score to a scalar");
  }
  const auto expected =
      nuisance_kind == NuisanceKind::kBinary ? nn::Activation::kSigmoid : nn::Activation::kLinear;
  if (adversary_spec.output_activation != expected) {
    throw std::invalid_argument(nuisance_kind == NuisanceKind::kBinary
                                    ? "binary nuisance needs a sigmoid adversary output"
                                    : "continuous nuisance needs a linear adversary output");
  }
  if (adversary_pretrain_epochs < 0) throw std::invalid_argument("adversary_pretrain_epochs < 0");
  if (joint_epochs < 0) throw std::invalid_argument("joint_epochs must be non-negative");
  if (!(adversary_lr > 0.0)) throw std::invalid_argument("adversary_lr must be positive");
}

Eigen::MatrixXd Adversary::standardize_inputs(const Eigen::VectorXd& scores) const {
  return ((scores.array() - input_mean) / input_scale).matrix();
}

std::vector<double> Adversary::targets(std::span<const double> nuisance) const {
  std::vector<double> out(nuisance.begin(), nuisance.end());
  if (kind == NuisanceKind::kContinuous) {
    for (double& v : out) v = (v - target_mean) / target_scale;
  }
  return out;
}

std::vector<double> Adversary::predict(const Eigen::VectorXd& scores) const {
  auto out = to_std(nn::predict(params, spec, standardize_inputs(scores)));
  if (kind == NuisanceKind::kContinuous) {
    for (double& v : out) v = v * target_scale + target_mean;
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double val_fraction,
                                            std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must be in (0, 1)");
  }
  std::set<std::int64_t> group_set(dataset.group_ids().begin(), dataset.group_ids().end());
  if (group_set.size() < 2) throw std::invalid_argument("need at least 2 distinct groups to split");
  std::vector<std::int64_t> groups(group_set.begin(), group_set.end());
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  std::shuffle(groups.begin(), groups.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(groups.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, groups.size() - 1);
  const std::set<std::int64_t> val_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (val_groups.count(dataset.group_ids()[i]) ? val_idx : train_idx).push_back(i);
  }
  return {dataset.subset(train_idx), dataset.subset(val_idx)};
}

double classifier_step(nn::NetworkParams& params, const nn::NetworkSpec& spec,
                       nn::OptimizerState& state, const nn::SgdHyper& hyper,
                       const Eigen::MatrixXd& x, std::span<const double> labels) {
  const auto trace = nn::forward(params, spec, x);
  const double loss = nn::bce_loss(to_std(trace.output().col(0)), labels);
  nn::sgd_step(params, nn::backward(trace, params, spec, nn::LossKind::kBce, labels), state, hyper);
  return loss;
}

double adversarial_classifier_step(nn::NetworkParams& params, const nn::NetworkSpec& spec,
                                   nn::OptimizerState& state, const nn::SgdHyper& hyper,
                                   const Eigen::MatrixXd& x, std::span<const double> labels,
                                   std::span<const double> nuisance, const Adversary& adversary,
                                   double lambda_weight) {
  const auto trace = nn::forward(params, spec, x);
  const Eigen::VectorXd scores = trace.output().col(0);
  const double loss = nn::bce_loss(to_std(scores), labels);
  Eigen::MatrixXd delta = nn::output_delta(trace, spec, nn::LossKind::kBce, labels);

  // d L_adv / d s through the frozen adversary and the input standardization.
  const auto adv_trace = nn::forward(adversary.params, adversary.spec, adversary.standardize_inputs(scores));
  const auto targets = adversary.targets(nuisance);
  const Eigen::MatrixXd adv_delta =
      nn::output_delta(adv_trace, adversary.spec, adversary_loss(adversary.kind), targets);
  Eigen::MatrixXd d_input;
  nn::backward_from_delta(adv_trace, adversary.params, adversary.spec, adv_delta, &d_input);
  const Eigen::ArrayXd d_adv_d_logit =
      d_input.col(0).array() / adversary.input_scale * scores.array() * (1.0 - scores.array());

  // The classifier ascends the adversary's loss.
  delta.col(0).array() += -lambda_weight * d_adv_d_logit;
  nn::sgd_step(params, nn::backward_from_delta(trace, params, spec, delta), state, hyper);
  return loss;
}

TrainedModel train_standard(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  require_labels(dataset);
  auto [tr, val] = split_train_val(dataset, config.val_fraction, config.seed);
  return fit_classifier(tr, val, config, Method::kStandard, uniform_plan(tr.size(), config.batch_size),
                        false);
}

Adversary fit_score_adversary(const nn::NetworkSpec& spec, NuisanceKind kind,
                              std::span<const double> scores, std::span<const double> nuisance,
                              int epochs, double learning_rate, int batch_size, std::uint64_t seed) {
  if (scores.size() != nuisance.size() || scores.empty()) {
    throw std::invalid_argument("adversary needs equal-length, non-empty scores and nuisance");
  }
  const auto mean_sd = [](std::span<const double> v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    return std::pair{m, sd > 0.0 ? sd : 1.0};
  };
  Adversary adv;
  adv.spec = spec;
  adv.kind = kind;
  adv.params = nn::init_params(adv.spec, derive_seed(seed, kAdversaryInitStream));
  std::tie(adv.input_mean, adv.input_scale) = mean_sd(scores);
  if (kind == NuisanceKind::kContinuous) std::tie(adv.target_mean, adv.target_scale) = mean_sd(nuisance);

  const Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(scores.data(), static_cast<Eigen::Index>(scores.size()));
  const Eigen::MatrixXd inputs = adv.standardize_inputs(s);
  const auto targets = adv.targets(nuisance);
  auto state = nn::OptimizerState::for_params(adv.params, learning_rate);
  const nn::SgdHyper hyper{0.9, 1e-4};
  std::mt19937_64 rng(derive_seed(seed, kAdversaryShuffleStream));
  for (int e = 0; e < epochs; ++e) adversary_epoch(adv, state, hyper, inputs, targets, batch_size, rng);
  return adv;
}

Adversary pretrain_adversary(const TrainedModel& model, const Dataset& dataset,
                             const AdvConfig& adv_config, std::uint64_t seed) {
  adv_config.validate();
  if (dataset.nuisance_kind() != adv_config.nuisance_kind) {
    throw std::invalid_argument("adversary nuisance kind does not match the dataset");
  }
  if (dataset.empty()) throw std::invalid_argument("adversary dataset is empty");
  return fit_score_adversary(adv_config.adversary_spec, adv_config.nuisance_kind,
                             predict_scores(model, dataset), dataset.nuisance(),
                             adv_config.adversary_pretrain_epochs, adv_config.adversary_lr, 128, seed);
}

TrainedModel train_adversarial(const Dataset& dataset, const TrainConfig& config,
                               const AdvConfig& adv_config) {
  config.validate();
  adv_config.validate();
  require_labels(dataset);
  if (dataset.nuisance_kind() != adv_config.nuisance_kind) {
    throw std::invalid_argument("adversary nuisance kind does not match the dataset");
  }
  auto [tr, val] = split_train_val(dataset, config.val_fraction, config.seed);
  TrainedModel model = fit_classifier(tr, val, config, Method::kStandard,
                                      uniform_plan(tr.size(), config.batch_size), false);
  model.method = Method::kAdversarial;

  Adversary adv = pretrain_adversary(model, tr, adv_config, config.seed);
  model.report.pretrained_probe_metric =
      probe_metric(adv, classifier_scores(model.params, model.spec, val), val.nuisance());

  const auto hyper = config.sgd();
  auto clf_state = nn::OptimizerState::for_params(model.params, config.initial_lr);
  auto adv_state = nn::OptimizerState::for_params(adv.params, adv_config.adversary_lr);
  std::mt19937_64 adv_rng(derive_seed(config.seed, kAdversaryShuffleStream + 100));
  std::mt19937_64 batch_rng(derive_seed(config.seed, kJointStream));
  const auto adv_targets = adv.targets(tr.nuisance());
  const Eigen::MatrixXd train_x = tr.features();

  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), batch_rng);
  std::size_t cursor = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int j = 1; j <= adv_config.joint_epochs; ++j) {
    const Eigen::VectorXd scores = nn::predict(model.params, model.spec, train_x);
    const double adv_loss = adversary_epoch(adv, adv_state, hyper, adv.standardize_inputs(scores),
                                            adv_targets, config.batch_size, adv_rng);

    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), batch_rng);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, std::min(batch, order.size()));
    cursor += idx.size();
    const double loss = adversarial_classifier_step(
        model.params, model.spec, clf_state, hyper, tr.feature_rows(idx), gather(tr.labels(), idx),
        gather(tr.nuisance(), idx), adv, adv_config.lambda_weight);
    require_finite(loss, "adversarial classifier step");

    const Eigen::VectorXd val_scores = classifier_scores(model.params, model.spec, val);
    model.report.joint.push_back(
        {j, adv_loss, nn::bce_loss(to_std(val_scores), val.labels()),
         probe_metric(adv, val_scores, val.nuisance())});
  }
  if (!model.params.all_finite()) throw std::domain_error("adversarial training diverged");
  model.adversary = std::move(adv);
  return model;
}

InstanceWeightTable compute_instance_weights(const Dataset& dataset) {
  require_binary_nuisance(dataset, "instance weighting");
  InstanceWeightTable t;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ++t.counts[static_cast<std::size_t>(dataset.label(i))][dataset.nuisance()[i] == 1.0 ? 1 : 0];
  }
  const auto n = static_cast<double>(dataset.size());
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t v = 0; v < 2; ++v) {
      if (t.counts[y][v] == 0) {
        throw std::invalid_argument("instance weighting needs all four (label, nuisance) cells non-empty");
      }
    }
    t.p_y[y] = static_cast<double>(t.counts[y][0] + t.counts[y][1]) / n;
  }
  for (std::size_t v = 0; v < 2; ++v) {
    const auto n_v = static_cast<double>(t.counts[0][v] + t.counts[1][v]);
    for (std::size_t y = 0; y < 2; ++y) {
      t.p_y_given_v[y][v] = static_cast<double>(t.counts[y][v]) / n_v;
      t.weight[y][v] = t.p_y[y] / t.p_y_given_v[y][v];
    }
  }
  return t;
}

WeightedSampler::WeightedSampler(std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("sampler needs at least one weight");
  cumulative_.reserve(weights.size());
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("sampling weights must be finite and >= 0");
    total += w;
    cumulative_.push_back(total);
  }
  if (!(total > 0.0)) throw std::invalid_argument("sampling weights sum to zero");
}

std::size_t WeightedSampler::draw(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unit(0.0, cumulative_.back());
  const double u = unit(rng);
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

TrainedModel train_instance_weighted(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  require_labels(dataset);
  auto [tr, val] = split_train_val(dataset, config.val_fraction, config.seed);
  const auto table = compute_instance_weights(tr);
  std::vector<double> w(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) w[i] = table.weight_for(tr.label(i), tr.nuisance()[i]);
  const WeightedSampler sampler(w);
  const std::size_t n = tr.size();
  const auto b = static_cast<std::size_t>(config.batch_size);
  BatchPlan plan = [&sampler, n, b](std::mt19937_64& rng) {
    Batches out;
    for (std::size_t start = 0; start < n; start += b) {
      std::vector<std::size_t> idx(std::min(b, n - start));
      for (auto& i : idx) i = sampler.draw(rng);
      out.push_back(std::move(idx));
    }
    return out;
  };
  return fit_classifier(tr, val, config, Method::kInstanceWeighting, plan, false);
}

Dataset match_subsample(const Dataset& dataset, std::uint64_t seed) {
  require_binary_nuisance(dataset, "matching");
  std::array<std::array<std::int64_t, 2>, 2> counts{};  // [v][y]
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ++counts[dataset.nuisance()[i] == 1.0 ? 1 : 0][static_cast<std::size_t>(dataset.label(i))];
  }
  const auto size_of = [&](std::size_t v) { return counts[v][0] + counts[v][1]; };
  if (size_of(0) == 0 || size_of(1) == 0) throw std::invalid_argument("matching needs both nuisance groups");

  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  // Equal rates: pos0 / n0 == pos1 / n1.
  if (counts[0][1] * size_of(1) == counts[1][1] * size_of(0)) return dataset.subset(all);

  const std::size_t low = counts[0][1] * size_of(1) < counts[1][1] * size_of(0) ? 0 : 1;
  const std::size_t high = 1 - low;
  const std::int64_t keep = std::llround(static_cast<double>(counts[low][1]) *
                                         static_cast<double>(counts[high][0]) /
                                         static_cast<double>(counts[high][1]));
  if (counts[low][1] + keep == 0) {
    throw std::invalid_argument("matching would empty the nuisance group with no positives");
  }
  const std::int64_t remove = counts[low][0] - keep;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if ((dataset.nuisance()[i] == 1.0 ? 1u : 0u) == low && dataset.label(i) == 0) candidates.push_back(i);
  }
  std::mt19937_64 rng(derive_seed(seed, kMatchStream));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<bool> drop(dataset.size(), false);
  for (std::int64_t k = 0; k < remove; ++k) drop[candidates[static_cast<std::size_t>(k)]] = true;
  std::vector<std::size_t> kept;
  kept.reserve(dataset.size() - static_cast<std::size_t>(std::max<std::int64_t>(remove, 0)));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!drop[i]) kept.push_back(i);
  }
  return dataset.subset(kept);
}

TrainedModel train_matching(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  require_labels(dataset);
  TrainedModel m = train_standard(match_subsample(dataset, config.seed), config);
  m.method = Method::kMatching;
  return m;
}

TrainedModel train_covariate(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  require_labels(dataset);
  auto [tr, val] = split_train_val(dataset, config.val_fraction, config.seed);
  return fit_classifier(tr, val, config, Method::kCovariate, uniform_plan(tr.size(), config.batch_size),
                        true);
}

std::vector<double> eval_covariate(const TrainedModel& model, const Dataset& dataset) {
  if (!model.covariate) throw std::invalid_argument("model has no covariate head");
  const Eigen::VectorXd off = Eigen::VectorXd::Constant(
      static_cast<Eigen::Index>(dataset.size()), model.covariate->weight * model.covariate->train_mean);
  return to_std(classifier_scores(model.params, model.spec, dataset, &off));
}

std::vector<double> predict_scores(const TrainedModel& model, const Dataset& dataset) {
  if (model.covariate) return eval_covariate(model, dataset);
  return to_std(classifier_scores(model.params, model.spec, dataset));
}

Eigen::MatrixXd hidden_embedding(const TrainedModel& model, const Dataset& dataset) {
  const Eigen::MatrixXd x = dataset.features();
  return nn::forward(model.params, model.spec, x).last_hidden();
}

TrainedModel train(Method method, const Dataset& dataset, const TrainConfig& config,
                   const AdvConfig& adv_config) {
  switch (method) {
    case Method::kStandard: return train_standard(dataset, config);
    case Method::kAdversarial: return train_adversarial(dataset, config, adv_config);
    case Method::kInstanceWeighting: return train_instance_weighted(dataset, config);
    case Method::kMatching: return train_matching(dataset, config);
    case Method::kCovariate: return train_covariate(dataset, config);
  }
  throw std::invalid_argument("unknown method");
}

}  // namespace deconf::train
