#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deconf/dataset.hpp"
#include "deconf/metrics.hpp"
#include "deconf/net.hpp"
#include "deconf/trainers.hpp"

namespace deconf::diag {

inline constexpr std::size_t kMinProbeSamples = 200;

struct ProbeConfig {
  nn::NetworkSpec spec{{1, 32, 32, 32, 1}, nn::Activation::kRelu, nn::Activation::kSigmoid};
  double test_fraction = 0.3;
  int epochs = 20;
  int batch_size = 128;
  double learning_rate = 1e-2;
};

// How well the nuisance can be predicted from the classifier score alone.
struct ProbeReport {
  NuisanceKind kind = NuisanceKind::kBinary;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double auroc = 0.0;  // binary nuisance
  double r2 = 0.0;     // continuous nuisance
  double mse = 0.0;    // continuous nuisance, original units
  metrics::RocResult roc;  // binary nuisance, held-out split
  std::vector<double> test_scores;
  std::vector<double> test_nuisance;
};

// Trains a fresh probe on a stratified 70/30 split (binary) or a random 70/30
// split (continuous) of (score -> nuisance) and reports held-out performance.
ProbeReport probe_nuisance(std::span<const double> scores, std::span<const double> nuisance,
                           NuisanceKind kind, std::uint64_t seed, const ProbeConfig& config = {});

struct AttributionVector {
  std::vector<double> values;
  std::string reference_id;
  int n_samples = 0;
};

// Differentiable scalar model for attribution: a network plus an optional
// constant added to the final pre-activation.
struct ScalarModel {
  const nn::NetworkParams* params = nullptr;
  const nn::NetworkSpec* spec = nullptr;
  double output_offset = 0.0;

  static ScalarModel of(const train::TrainedModel& model);
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& x) const;
  // Rows are d f / d x for each input row.
  Eigen::MatrixXd input_gradients(const Eigen::MatrixXd& x) const;
};

// Monte-Carlo Expected Gradients: mean over (x' ~ references, alpha ~ U(0,1)) of
// (x - x') * grad f(x' + alpha (x - x')).
AttributionVector expected_gradients(const ScalarModel& model, std::span<const double> x,
                                     const Dataset& references, int n_samples, std::uint64_t seed);

// Linear-interpolated percentile of |attrs|; magnitudes above it are clamped, signs kept.
std::vector<double> clip_attributions(std::span<const double> attrs, double percentile = 99.9);
double percentile(std::vector<double> values, double pct);

struct PcaResult {
  Eigen::MatrixXd embedding;   // rows x k
  Eigen::MatrixXd components;  // columns are orthonormal directions
  Eigen::VectorXd explained_variance;
  Eigen::VectorXd mean;
  bool degenerate = false;     // rank < k; trailing components carry zero variance
};

PcaResult pca_embed(const Eigen::MatrixXd& data, int k = 2);

struct LogisticFit {
  Eigen::VectorXd weights;
  double bias = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Unregularized logistic regression by full-batch gradient descent; stops when
// the gradient max-norm drops below `tolerance` or after `max_steps`.
LogisticFit fit_logistic(const Eigen::MatrixXd& x, std::span<const double> labels,
                         double tolerance = 1e-8, int max_steps = 100000);

struct OrthogonalityReport {
  PcaResult pca;
  LogisticFit view_head;
  LogisticFit pathology_head;
  double r = 0.0;  // correlation through the origin of the two weight vectors
};

OrthogonalityReport orthogonality(const Eigen::MatrixXd& hidden, std::span<const double> view_labels,
                                  std::span<const double> pathology_labels);

}  // namespace deconf::diag
