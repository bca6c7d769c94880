#pragma once

// Test-side oracles. Nothing here calls into the code under test except where
// a comment says so.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "deconf/net.hpp"

namespace oracle {

using deconf::nn::Activation;
using deconf::nn::NetworkParams;
using deconf::nn::NetworkSpec;

inline double act(Activation a, double z) {
  switch (a) {
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::kLinear: return z;
  }
  return z;
}

// Plain loops, one sample at a time. Also reports the smallest |pre-activation|
// of any ReLU unit so callers can avoid kinks.
inline std::vector<double> forward(const NetworkParams& p, const NetworkSpec& spec, const std::vector<double>& x,
                                   double offset = 0.0, double* min_relu_pre = nullptr) {
  std::vector<double> a = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    const bool last = l + 1 == p.layers.size();
    std::vector<double> next(static_cast<std::size_t>(L.weight.rows()));
    for (Eigen::Index r = 0; r < L.weight.rows(); ++r) {
      double z = L.bias(r);
      for (Eigen::Index c = 0; c < L.weight.cols(); ++c) z += L.weight(r, c) * a[static_cast<std::size_t>(c)];
      if (last) z += offset;
      const Activation f = last ? spec.output_activation : spec.hidden_activation;
      if (f == Activation::kRelu && min_relu_pre) *min_relu_pre = std::min(*min_relu_pre, std::abs(z));
      next[static_cast<std::size_t>(r)] = act(f, z);
    }
    a = std::move(next);
  }
  return a;
}

inline double bce(double s, double y) {
  s = std::clamp(s, 1e-7, 1.0 - 1e-7);
  return -(y * std::log(s) + (1.0 - y) * std::log(1.0 - s));
}

enum class Loss { kBce, kMse };

// Mean (or weighted mean) loss over a batch, all by hand.
inline double batch_loss(const NetworkParams& p, const NetworkSpec& spec, const Eigen::MatrixXd& x,
                         const std::vector<double>& y, Loss loss, const std::vector<double>* w = nullptr) {
  double total = 0.0, wsum = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    const double s = forward(p, spec, row)[0];
    const double yi = y[static_cast<std::size_t>(i)];
    const double l = loss == Loss::kBce ? bce(s, yi) : (s - yi) * (s - yi);
    const double wi = w ? (*w)[static_cast<std::size_t>(i)] : 1.0;
    total += wi * l;
    wsum += wi;
  }
  return total / wsum;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Central differences of `f` with respect to every parameter of `p`, compared
// against `analytic` (same layout). Returns the max relative error.
template <typename F>
double max_param_rel_error(NetworkParams p, const deconf::nn::Gradients& analytic, F&& f, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    for (Eigen::Index k = 0; k < L.weight.size(); ++k) {
      double& v = L.weight.data()[k];
      const double keep = v;
      v = keep + h;
      const double up = f(p);
      v = keep - h;
      const double down = f(p);
      v = keep;
      worst = std::max(worst, rel_err(analytic.layers[l].weight.data()[k], (up - down) / (2 * h)));
    }
    for (Eigen::Index k = 0; k < L.bias.size(); ++k) {
      double& v = L.bias(k);
      const double keep = v;
      v = keep + h;
      const double up = f(p);
      v = keep - h;
      const double down = f(p);
      v = keep;
      worst = std::max(worst, rel_err(analytic.layers[l].bias(k), (up - down) / (2 * h)));
    }
  }
  return worst;
}

// O(n^2) pair counting: P(score_pos > score_neg) + 0.5 P(tie).
inline double auroc_pairs(std::span<const double> s, std::span<const double> y) {
  std::int64_t twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      ++pairs;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pairs);
}

// Brute force: evaluate both empirical CDFs at every pooled point by counting.
inline double ks_brute(std::span<const double> a, std::span<const double> b) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  double d = 0.0;
  for (double x : pooled) {
    std::size_t ca = 0, cb = 0;
    for (double v : a) ca += v <= x;
    for (double v : b) cb += v <= x;
    d = std::max(d, std::abs(static_cast<double>(ca) / static_cast<double>(a.size()) -
                             static_cast<double>(cb) / static_cast<double>(b.size())));
  }
  return d;
}

// Cyclic Jacobi eigen-decomposition of a symmetric matrix; eigenvalues on the
// diagonal of the returned matrix, eigenvectors in the columns of `vecs`.
inline Eigen::MatrixXd jacobi_eigen(Eigen::MatrixXd a, Eigen::MatrixXd& vecs, int sweeps = 100) {
  const Eigen::Index n = a.rows();
  vecs = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = vecs(k, p), vkq = vecs(k, q);
          vecs(k, p) = c * vkp - s * vkq;
          vecs(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  return a;
}

}  // namespace oracle
