#include "deconf/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace deconf::diag {

namespace {

using metrics::DegenerateInputError;

std::vector<double> pick(std::span<const double> v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

// Shuffles each stratum and sends round(fraction * size) of it to the test side.
void stratified_split(const std::vector<std::vector<std::size_t>>& strata, double test_fraction,
                      std::mt19937_64& rng, std::vector<std::size_t>& train_idx,
                      std::vector<std::size_t>& test_idx) {
  for (auto stratum : strata) {
    std::shuffle(stratum.begin(), stratum.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(stratum.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, stratum.size() - 1);
    test_idx.insert(test_idx.end(), stratum.begin(), stratum.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_idx.insert(train_idx.end(), stratum.begin() + static_cast<std::ptrdiff_t>(n_test), stratum.end());
  }
}

}  // namespace

ProbeReport probe_nuisance(std::span<const double> scores, std::span<const double> nuisance,
                           NuisanceKind kind, std::uint64_t seed, const ProbeConfig& config) {
  if (scores.size() != nuisance.size()) throw std::invalid_argument("scores and nuisance differ in length");
  if (scores.size() < kMinProbeSamples) {
    throw DegenerateInputError("probe needs at least " + std::to_string(kMinProbeSamples) + " samples");
  }
  if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0)) {
    throw std::invalid_argument("probe test_fraction must be in (0, 1)");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]) || !std::isfinite(nuisance[i])) {
      throw std::invalid_argument("probe inputs must be finite");
    }
  }

  std::mt19937_64 rng(train::derive_seed(seed, 11));
  std::vector<std::size_t> train_idx, test_idx;
  if (kind == NuisanceKind::kBinary) {
    std::vector<std::vector<std::size_t>> strata(2);
    for (std::size_t i = 0; i < nuisance.size(); ++i) {
      if (nuisance[i] != 0.0 && nuisance[i] != 1.0) throw std::invalid_argument("binary nuisance must be 0 or 1");
      strata[nuisance[i] == 1.0 ? 1 : 0].push_back(i);
    }
    if (strata[0].size() < 2 || strata[1].size() < 2) {
      throw DegenerateInputError("binary nuisance is (nearly) constant");
    }
    stratified_split(strata, config.test_fraction, rng, train_idx, test_idx);
  } else {
    const auto [lo, hi] = std::minmax_element(nuisance.begin(), nuisance.end());
    if (*lo == *hi) throw DegenerateInputError("continuous nuisance is constant");
    std::vector<std::vector<std::size_t>> all(1);
    all[0].resize(nuisance.size());
    std::iota(all[0].begin(), all[0].end(), 0);
    stratified_split(all, config.test_fraction, rng, train_idx, test_idx);
  }

  nn::NetworkSpec spec = config.spec;
  spec.output_activation = kind == NuisanceKind::kBinary ? nn::Activation::kSigmoid : nn::Activation::kLinear;
  spec.validate();
  if (spec.input_dim() != 1 || spec.output_dim() != 1) throw std::invalid_argument("probe must map a scalar to a scalar");

  const auto train_s = pick(scores, train_idx);
  const auto train_v = pick(nuisance, train_idx);
  const train::Adversary probe = train::fit_score_adversary(
      spec, kind, train_s, train_v, config.epochs, config.learning_rate, config.batch_size, seed);

  ProbeReport report;
  report.kind = kind;
  report.n_train = train_idx.size();
  report.n_test = test_idx.size();
  report.test_scores = pick(scores, test_idx);
  report.test_nuisance = pick(nuisance, test_idx);
  const Eigen::VectorXd test_s = Eigen::Map<const Eigen::VectorXd>(
      report.test_scores.data(), static_cast<Eigen::Index>(report.test_scores.size()));
  const auto pred = probe.predict(test_s);

  if (kind == NuisanceKind::kBinary) {
    report.roc = metrics::roc_curve(pred, report.test_nuisance);
    report.auroc = report.roc.auroc;
  } else {
    const auto n = static_cast<double>(pred.size());
    const double mean = std::accumulate(report.test_nuisance.begin(), report.test_nuisance.end(), 0.0) / n;
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ss_res += (report.test_nuisance[i] - pred[i]) * (report.test_nuisance[i] - pred[i]);
      ss_tot += (report.test_nuisance[i] - mean) * (report.test_nuisance[i] - mean);
    }
    if (ss_tot == 0.0) throw DegenerateInputError("continuous nuisance is constant on the test split");
    report.mse = ss_res / n;
    report.r2 = 1.0 - ss_res / ss_tot;
  }
  return report;
}

ScalarModel ScalarModel::of(const train::TrainedModel& model) {
  ScalarModel m;
  m.params = &model.params;
  m.spec = &model.spec;
  if (model.covariate) m.output_offset = model.covariate->weight * model.covariate->train_mean;
  return m;
}

Eigen::VectorXd ScalarModel::evaluate(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd off = Eigen::VectorXd::Constant(x.rows(), output_offset);
  return nn::predict(*params, *spec, x, &off);
}

Eigen::MatrixXd ScalarModel::input_gradients(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd off = Eigen::VectorXd::Constant(x.rows(), output_offset);
  const auto trace = nn::forward(*params, *spec, x, &off);
  Eigen::MatrixXd delta(x.rows(), 1);
  switch (spec->output_activation) {
    case nn::Activation::kSigmoid:
      delta.col(0) = (trace.output().col(0).array() * (1.0 - trace.output().col(0).array())).matrix();
      break;
    case nn::Activation::kLinear:
      delta.setOnes();
      break;
    case nn::Activation::kRelu:
      delta.col(0) = (trace.pre.back().col(0).array() > 0.0).cast<double>().matrix();
      break;
  }
  Eigen::MatrixXd grad;
  nn::backward_from_delta(trace, *params, *spec, delta, &grad);
  return grad;
}

AttributionVector expected_gradients(const ScalarModel& model, std::span<const double> x,
                                     const Dataset& references, int n_samples, std::uint64_t seed) {
  if (model.params == nullptr || model.spec == nullptr) throw std::invalid_argument("scalar model is unset");
  if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");
  if (references.empty()) throw std::invalid_argument("reference set is empty");
  const auto d = static_cast<Eigen::Index>(x.size());
  if (d != model.spec->input_dim() || static_cast<int>(references.dim()) != model.spec->input_dim()) {
    throw nn::DimensionError("attribution input does not match the model input dimension");
  }
  const Eigen::Map<const Eigen::RowVectorXd> xv(x.data(), d);
  const auto refs = references.features();

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ref_dist(0, references.size() - 1);
  std::uniform_real_distribution<double> alpha_dist(0.0, 1.0);

  constexpr int kChunk = 1024;
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(d);
  for (int start = 0; start < n_samples; start += kChunk) {
    const int rows = std::min(kChunk, n_samples - start);
    Eigen::MatrixXd diff(rows, d);
    Eigen::MatrixXd points(rows, d);
    for (int r = 0; r < rows; ++r) {
      const auto ref = refs.row(static_cast<Eigen::Index>(ref_dist(rng)));
      const double alpha = alpha_dist(rng);
      diff.row(r) = xv - ref;
      points.row(r) = ref + alpha * diff.row(r);
    }
    total += (diff.array() * model.input_gradients(points).array()).matrix().colwise().sum();
  }
  AttributionVector out;
  total /= static_cast<double>(n_samples);
  out.values.assign(total.data(), total.data() + d);
  out.n_samples = n_samples;
  out.reference_id = references.meta.config_hash.empty()
                         ? "n=" + std::to_string(references.size())
                         : references.meta.config_hash;
  return out;
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> clip_attributions(std::span<const double> attrs, double pct) {
  std::vector<double> mags;
  mags.reserve(attrs.size());
  for (double a : attrs) mags.push_back(std::abs(a));
  const double cap = percentile(mags, pct);
  std::vector<double> out(attrs.begin(), attrs.end());
  for (double& a : out) a = std::clamp(a, -cap, cap);
  return out;
}

PcaResult pca_embed(const Eigen::MatrixXd& data, int k) {
  if (k < 1) throw std::invalid_argument("PCA needs k >= 1");
  if (data.rows() < 2) throw std::invalid_argument("PCA needs at least 2 rows");
  if (data.cols() < k) throw nn::DimensionError("PCA: k exceeds the data dimension");
  PcaResult res;
  res.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - res.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("PCA eigen-decomposition failed");

  const Eigen::Index d = data.cols();
  res.components.resize(d, k);
  res.explained_variance.resize(k);
  const double top = std::max(eig.eigenvalues()(d - 1), 0.0);
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    res.components.col(c) = v;
    const double ev = eig.eigenvalues()(d - 1 - c);
    res.explained_variance(c) = std::max(ev, 0.0);
    if (ev <= 1e-12 * std::max(top, 1.0)) res.degenerate = true;
  }
  res.embedding = centered * res.components;
  return res;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& x, std::span<const double> labels, double tolerance,
                         int max_steps) {
  if (x.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("logistic fit: rows and labels differ");
  }
  if (x.rows() < 2) throw std::invalid_argument("logistic fit needs at least 2 rows");
  Eigen::VectorXd y(x.rows());
  bool any_pos = false, any_neg = false;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double l = labels[static_cast<std::size_t>(i)];
    if (l != 0.0 && l != 1.0) throw std::invalid_argument("logistic labels must be 0 or 1");
    y(i) = l;
    (l == 1.0 ? any_pos : any_neg) = true;
  }
  if (!any_pos || !any_neg) throw DegenerateInputError("logistic fit needs both classes");

  // Fit in standardized coordinates, then map back; the maximum-likelihood
  // solution is the same, gradient descent just gets a better-conditioned problem.
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd scale =
      ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (scale(j) == 0.0) scale(j) = 1.0;
  }
  const auto n = static_cast<double>(x.rows());
  Eigen::MatrixXd z(x.rows(), x.cols() + 1);
  z.leftCols(x.cols()) = ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  z.col(x.cols()).setOnes();

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(z.transpose() * z / n, Eigen::EigenvaluesOnly);
  const double step = 1.0 / (0.25 * eig.eigenvalues().maxCoeff());

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(z.cols());
  LogisticFit fit;
  for (int it = 1; it <= max_steps; ++it) {
    Eigen::VectorXd p = z * theta;
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = nn::sigmoid(p(i));
    const Eigen::VectorXd grad = z.transpose() * (p - y) / n;
    fit.iterations = it;
    if (grad.cwiseAbs().maxCoeff() < tolerance) {
      fit.converged = true;
      break;
    }
    theta -= step * grad;
  }
  const Eigen::VectorXd w_std = theta.head(x.cols());
  fit.weights = (w_std.array() / scale.transpose().array()).matrix();
  fit.bias = theta(x.cols()) - mean.dot(fit.weights);
  return fit;
}

OrthogonalityReport orthogonality(const Eigen::MatrixXd& hidden, std::span<const double> view_labels,
                                  std::span<const double> pathology_labels) {
  if (static_cast<Eigen::Index>(view_labels.size()) != hidden.rows() ||
      pathology_labels.size() != view_labels.size()) {
    throw std::invalid_argument("orthogonality: label counts do not match the embedding");
  }
  OrthogonalityReport rep;
  rep.pca = pca_embed(hidden, 2);
  rep.view_head = fit_logistic(rep.pca.embedding, view_labels);
  rep.pathology_head = fit_logistic(rep.pca.embedding, pathology_labels);
  const double nv = rep.view_head.weights.norm();
  const double np = rep.pathology_head.weights.norm();
  if (nv == 0.0 || np == 0.0) throw DegenerateInputError("orthogonality: a head has zero weights");
  rep.r = rep.view_head.weights.dot(rep.pathology_head.weights) / (nv * np);
  return rep;
}

}  // namespace deconf::diag
