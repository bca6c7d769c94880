#include "deconf/net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace deconf::nn {

namespace {

void apply_activation(Activation act, const Matrix& pre, Matrix& post) {
  switch (act) {
    case Activation::kRelu:
      post = pre.cwiseMax(0.0);
      break;
    case Activation::kSigmoid:
      post = pre.unaryExpr([](double z) { return sigmoid(z); });
      break;
    case Activation::kLinear:
      post = pre;
      break;
  }
}

// Multiplies `delta` (d loss / d post) in place by d post / d pre.
void apply_activation_derivative(Activation act, const Matrix& pre, const Matrix& post,
                                 Matrix& delta) {
  switch (act) {
    case Activation::kRelu:
      delta = delta.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
      break;
    case Activation::kSigmoid:
      delta = delta.cwiseProduct(post.cwiseProduct((1.0 - post.array()).matrix()));
      break;
    case Activation::kLinear:
      break;
  }
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

double weight_total(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("loss weights sum to zero");
  return total;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void NetworkSpec::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("network needs at least 2 layer sizes");
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");
  }
  if (hidden_activation != Activation::kRelu) {
    throw std::invalid_argument("hidden activation must be relu");
  }
  if (output_activation == Activation::kRelu) {
    throw std::invalid_argument("output activation must be sigmoid or linear");
  }
}

bool NetworkParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Gradients Gradients::zeros_like(const NetworkParams& params) {
  Gradients g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return g;
}

bool Gradients::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  check_lengths(layers.size(), other.layers.size(), "gradient accumulation");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

Gradients& Gradients::operator*=(double scale) {
  for (auto& l : layers) {
    l.weight *= scale;
    l.bias *= scale;
  }
  return *this;
}

OptimizerState OptimizerState::for_params(const NetworkParams& params, double learning_rate) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  return {Gradients::zeros_like(params), learning_rate};
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  NetworkParams params;
  params.layers.reserve(spec.num_layers());
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const int fan_in = spec.layer_sizes[i];
    const int fan_out = spec.layer_sizes[i + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void check_compatible(const NetworkParams& params, const NetworkSpec& spec) {
  spec.validate();
  if (params.layers.size() != spec.num_layers()) {
    throw DimensionError("parameter layer count does not match spec");
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.weight.rows() != spec.layer_sizes[i + 1] || l.weight.cols() != spec.layer_sizes[i] ||
        l.bias.size() != spec.layer_sizes[i + 1]) {
      throw DimensionError("layer " + std::to_string(i) + " shape does not match spec");
    }
  }
}

ForwardTrace forward(const NetworkParams& params, const NetworkSpec& spec, const Matrix& batch,
                     const Vector* output_offset) {
  check_compatible(params, spec);
  if (batch.cols() != spec.input_dim()) {
    throw DimensionError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                         std::to_string(spec.input_dim()));
  }
  if (output_offset != nullptr && output_offset->size() != batch.rows()) {
    throw DimensionError("output offset length does not match batch");
  }
  ForwardTrace trace;
  trace.input = batch;
  trace.pre.resize(spec.num_layers());
  trace.post.resize(spec.num_layers());
  const Matrix* prev = &trace.input;
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const auto& layer = params.layers[i];
    Matrix pre = (*prev) * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    if (output_offset != nullptr && i + 1 == spec.num_layers()) pre.colwise() += *output_offset;
    apply_activation(spec.activation_of(i), pre, trace.post[i]);
    trace.pre[i] = std::move(pre);
    prev = &trace.post[i];
  }
  return trace;
}

Vector predict(const NetworkParams& params, const NetworkSpec& spec, const Matrix& batch,
               const Vector* output_offset) {
  return forward(params, spec, batch, output_offset).output().col(0);
}

double bce_loss(std::span<const double> scores, std::span<const double> labels,
                std::optional<std::span<const double>> weights) {
  check_lengths(scores.size(), labels.size(), "bce_loss");
  if (weights) check_lengths(scores.size(), weights->size(), "bce_loss weights");
  if (scores.empty()) throw std::invalid_argument("bce_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double y = labels[i];
    const double l = -(y * std::log(s) + (1.0 - y) * std::log(1.0 - s));
    total += weights ? (*weights)[i] * l : l;
  }
  const double denom = weights ? weight_total(*weights) : static_cast<double>(scores.size());
  return total / denom;
}

double mse_loss(std::span<const double> predictions, std::span<const double> targets) {
  check_lengths(predictions.size(), targets.size(), "mse_loss");
  if (predictions.empty()) throw std::invalid_argument("mse_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    total += d * d;
  }
  return total / static_cast<double>(predictions.size());
}

Matrix output_delta(const ForwardTrace& trace, const NetworkSpec& spec, LossKind loss,
                    std::span<const double> labels,
                    std::optional<std::span<const double>> weights) {
  const Eigen::Index n = trace.batch_size();
  check_lengths(static_cast<std::size_t>(n), labels.size(), "output_delta labels");
  if (weights) check_lengths(labels.size(), weights->size(), "output_delta weights");
  const double denom = weights ? weight_total(*weights) : static_cast<double>(n);
  const Matrix& out = trace.output();
  Matrix delta = Matrix::Zero(n, out.cols());
  const Activation act = spec.output_activation;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = (weights ? (*weights)[static_cast<std::size_t>(i)] : 1.0) / denom;
    const double s = out(i, 0);
    const double y = labels[static_cast<std::size_t>(i)];
    if (loss == LossKind::kBce) {
      if (act != Activation::kSigmoid) throw std::invalid_argument("BCE loss requires a sigmoid output");
      // The clamp has zero derivative outside [eps, 1 - eps].
      const bool clamped = s < kBceEpsilon || s > 1.0 - kBceEpsilon;
      delta(i, 0) = clamped ? 0.0 : w * (s - y);
    } else {
      double d = w * 2.0 * (s - y);
      if (act == Activation::kSigmoid) d *= s * (1.0 - s);
      delta(i, 0) = d;
    }
  }
  return delta;
}

Gradients backward_from_delta(const ForwardTrace& trace, const NetworkParams& params,
                              const NetworkSpec& spec, const Matrix& delta, Matrix* input_grad) {
  check_compatible(params, spec);
  if (trace.pre.size() != spec.num_layers() || trace.input.cols() != spec.input_dim()) {
    throw DimensionError("trace does not match network");
  }
  if (delta.rows() != trace.batch_size() || delta.cols() != spec.output_dim()) {
    throw DimensionError("output delta shape does not match trace");
  }
  Gradients grads;
  grads.layers.resize(spec.num_layers());
  Matrix d = delta;
  for (std::size_t k = spec.num_layers(); k-- > 0;) {
    const Matrix& prev = k == 0 ? trace.input : trace.post[k - 1];
    if (trace.pre[k].cols() != params.layers[k].weight.rows()) {
      throw DimensionError("trace does not match parameters");
    }
    grads.layers[k].weight = d.transpose() * prev;
    grads.layers[k].bias = d.colwise().sum().transpose();
    if (k > 0 || input_grad != nullptr) {
      Matrix back = d * params.layers[k].weight;
      if (k > 0) {
        apply_activation_derivative(spec.hidden_activation, trace.pre[k - 1], trace.post[k - 1], back);
        d = std::move(back);
      } else {
        *input_grad = std::move(back);
      }
    }
  }
  return grads;
}

Gradients backward(const ForwardTrace& trace, const NetworkParams& params, const NetworkSpec& spec,
                   LossKind loss, std::span<const double> labels,
                   std::optional<std::span<const double>> weights) {
  return backward_from_delta(trace, params, spec, output_delta(trace, spec, loss, labels, weights));
}

void sgd_step(NetworkParams& params, const Gradients& grads, OptimizerState& state,
              const SgdHyper& hyper) {
  if (grads.layers.size() != params.layers.size() ||
      state.velocity.layers.size() != params.layers.size()) {
    throw DimensionError("sgd_step: gradient/parameter layer count mismatch");
  }
  if (!grads.all_finite()) throw std::domain_error("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    const auto& g = grads.layers[i];
    auto& v = state.velocity.layers[i];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        g.bias.size() != p.bias.size()) {
      throw DimensionError("sgd_step: gradient shape mismatch");
    }
    v.weight = hyper.momentum * v.weight + g.weight + hyper.weight_decay * p.weight;
    v.bias = hyper.momentum * v.bias + g.bias;
    p.weight -= state.learning_rate * v.weight;
    p.bias -= state.learning_rate * v.bias;
  }
}

void sgd_step_scalar(double& param, double grad, double& velocity, double learning_rate,
                     const SgdHyper& hyper, bool decay) {
  if (!std::isfinite(grad)) throw std::domain_error("sgd_step: non-finite gradient");
  velocity = hyper.momentum * velocity + grad + (decay ? hyper.weight_decay * param : 0.0);
  param -= learning_rate * velocity;
}

}  // namespace deconf::nn
