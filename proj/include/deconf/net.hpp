#pragma once

// Dense feedforward networks with analytic gradients and SGD with momentum.
//
// Batches are row-major in the logical sense: one sample per row, one feature
// per column. All arithmetic is double precision.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace deconf::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kRelu, kSigmoid, kLinear };

enum class LossKind { kBce, kMse };

// Clamp applied to probabilities before taking logs in the BCE loss.
inline constexpr double kBceEpsilon = 1e-7;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NetworkSpec {
  std::vector<int> layer_sizes;  // input dim first, output dim last
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kSigmoid;

  void validate() const;
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  Activation activation_of(std::size_t layer) const {
    return layer + 1 == num_layers() ? output_activation : hidden_activation;
  }

  bool operator==(const NetworkSpec&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out_dim x in_dim
  Vector bias;    // out_dim

  bool operator==(const DenseLayer&) const = default;
};

// Weights and biases of a network (houses theta_f or theta_r).
struct NetworkParams {
  std::vector<DenseLayer> layers;

  bool all_finite() const;
  std::size_t parameter_count() const;
  bool operator==(const NetworkParams&) const = default;
};

// Same layout as NetworkParams; holds d(loss)/d(parameter).
struct Gradients {
  std::vector<DenseLayer> layers;

  static Gradients zeros_like(const NetworkParams& params);
  bool all_finite() const;
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double scale);
};

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;   // per layer, batch x out_dim
  std::vector<Matrix> post;  // per layer, batch x out_dim

  const Matrix& output() const { return post.back(); }
  // Post-activation of the last hidden layer, or the input for single-layer nets.
  const Matrix& last_hidden() const { return post.size() >= 2 ? post[post.size() - 2] : input; }
  Eigen::Index batch_size() const { return input.rows(); }
};

struct OptimizerState {
  Gradients velocity;
  double learning_rate = 1e-2;

  static OptimizerState for_params(const NetworkParams& params, double learning_rate);
};

struct SgdHyper {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);

void check_compatible(const NetworkParams& params, const NetworkSpec& spec);

// `output_offset`, when given, is added to the final pre-activation of every
// row. It is how an extra covariate enters the classification head.
ForwardTrace forward(const NetworkParams& params, const NetworkSpec& spec, const Matrix& batch,
                     const Vector* output_offset = nullptr);

// Convenience: first output column as a vector.
Vector predict(const NetworkParams& params, const NetworkSpec& spec, const Matrix& batch,
               const Vector* output_offset = nullptr);

double bce_loss(std::span<const double> scores, std::span<const double> labels,
                std::optional<std::span<const double>> weights = std::nullopt);
double mse_loss(std::span<const double> predictions, std::span<const double> targets);

// d(loss)/d(final pre-activation), batch x 1. The loss is the (weighted) mean
// over the batch of the per-sample BCE or squared error on output column 0.
Matrix output_delta(const ForwardTrace& trace, const NetworkSpec& spec, LossKind loss,
                    std::span<const double> labels,
                    std::optional<std::span<const double>> weights = std::nullopt);

// Backpropagates an arbitrary final pre-activation delta. When `input_grad` is
// non-null it receives d(loss)/d(input), batch x input_dim.
Gradients backward_from_delta(const ForwardTrace& trace, const NetworkParams& params,
                              const NetworkSpec& spec, const Matrix& delta,
                              Matrix* input_grad = nullptr);

Gradients backward(const ForwardTrace& trace, const NetworkParams& params, const NetworkSpec& spec,
                   LossKind loss, std::span<const double> labels,
                   std::optional<std::span<const double>> weights = std::nullopt);

// v <- momentum*v + grad + weight_decay*param (weights only); param <- param - lr*v.
void sgd_step(NetworkParams& params, const Gradients& grads, OptimizerState& state,
              const SgdHyper& hyper);

// Scalar version of the same update, for parameters that live outside a network.
void sgd_step_scalar(double& param, double grad, double& velocity, double learning_rate,
                     const SgdHyper& hyper, bool decay);

double sigmoid(double z);

}  // namespace deconf::nn
