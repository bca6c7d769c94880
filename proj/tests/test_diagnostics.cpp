#include <doctest.h>

#include <random>

#include "deconf/diagnostics.hpp"
#include "deconf/synthgen.hpp"
#include "support.hpp"

using namespace deconf;

namespace {

Dataset gaussian_refs(int dim, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  Dataset ds(dim, NuisanceKind::kBinary);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.features.resize(static_cast<std::size_t>(dim));
    for (auto& f : s.features) f = z(rng);
    s.group_id = static_cast<std::int64_t>(i);
    ds.push_back(s);
  }
  return ds;
}

}  // namespace

TEST_CASE("expected gradients on a linear model recover w * (x - E[x'])") {
  const int d = 6;
  const nn::NetworkSpec spec{{d, 1}, nn::Activation::kRelu, nn::Activation::kLinear};
  auto p = nn::init_params(spec, 3);
  p.layers[0].weight << 1.0, -2.0, 0.5, 3.0, -0.25, 1.5;
  p.layers[0].bias << 0.7;
  const auto refs = gaussian_refs(d, 5000, 4);
  const Eigen::RowVectorXd ref_mean = refs.features().colwise().mean();
  const std::vector<double> x{3.0, -3.0, 3.2, 2.9, -3.1, 3.0};
  const diag::ScalarModel model{&p, &spec, 0.0};
  const auto eg = diag::expected_gradients(model, x, refs, 10000, 11);
  REQUIRE(eg.values.size() == static_cast<std::size_t>(d));
  CHECK(eg.n_samples == 10000);
  CHECK(eg.reference_id == "n=5000");
  for (int j = 0; j < d; ++j) {
    const double expect = p.layers[0].weight(0, j) * (x[static_cast<std::size_t>(j)] - ref_mean(j));
    CHECK(oracle::rel_err(eg.values[static_cast<std::size_t>(j)], expect) < 0.02);
  }
  // Deterministic in the seed.
  CHECK(diag::expected_gradients(model, x, refs, 10000, 11).values == eg.values);
}

TEST_CASE("expected gradients: self reference gives zero, completeness holds") {
  const nn::NetworkSpec spec{{4, 16, 8, 1}, nn::Activation::kRelu, nn::Activation::kSigmoid};
  const auto p = nn::init_params(spec, 21);
  const diag::ScalarModel model{&p, &spec, 0.0};
  Dataset single(4, NuisanceKind::kBinary);
  Sample s;
  s.features = {0.3, -1.2, 0.8, 2.0};
  single.push_back(s);
  const auto zero = diag::expected_gradients(model, s.features, single, 200, 1);
  for (double v : zero.values) CHECK(v == 0.0);

  const auto refs = gaussian_refs(4, 3000, 9);
  const std::vector<double> x{2.5, -2.0, 1.5, 3.0};
  const auto eg = diag::expected_gradients(model, x, refs, 20000, 5);
  const Eigen::MatrixXd xm = Eigen::Map<const Eigen::RowVectorXd>(x.data(), 4);
  const double fx = model.evaluate(xm)(0);
  const Eigen::MatrixXd rx = refs.features();
  const double f_ref = model.evaluate(rx).mean();
  const double sum = std::accumulate(eg.values.begin(), eg.values.end(), 0.0);
  CHECK(std::abs(sum - (fx - f_ref)) < 0.05 * std::abs(fx - f_ref));
}

TEST_CASE("scalar model input gradients match finite differences") {
  const nn::NetworkSpec spec{{3, 5, 1}, nn::Activation::kRelu, nn::Activation::kSigmoid};
  const auto p = nn::init_params(spec, 2);
  const diag::ScalarModel model{&p, &spec, 0.4};
  Eigen::MatrixXd x(2, 3);
  x << 0.5, -0.3, 1.1, -1.0, 0.2, 0.7;
  const Eigen::MatrixXd g = model.input_gradients(x);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 2; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      Eigen::MatrixXd up = x.row(i), down = x.row(i);
      up(0, j) += h;
      down(0, j) -= h;
      const double fd = (model.evaluate(up)(0) - model.evaluate(down)(0)) / (2 * h);
      CHECK(oracle::rel_err(g(i, j), fd) < 1e-5);
    }
  }
}

TEST_CASE("percentile and clipping") {
  CHECK(diag::percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(diag::percentile({1, 2, 3, 4}, 50) == 2.5);
  CHECK(diag::percentile({10, 0}, 100) == 10.0);
  CHECK(diag::percentile({10, 0}, 0) == 0.0);
  CHECK_THROWS_AS(diag::percentile({}, 50), std::invalid_argument);
  CHECK_THROWS_AS(diag::percentile({1}, 101), std::invalid_argument);

  std::vector<double> a(1000);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (i % 2 ? -1.0 : 1.0) * static_cast<double>(i);
  a[999] = -1e6;
  const auto c = diag::clip_attributions(a, 99.9);
  std::vector<double> mags(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mags[i] = std::abs(a[i]);
  const double cap = diag::percentile(mags, 99.9);
  CHECK(c[999] == -cap);
  CHECK(c[10] == a[10]);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(c[i]) <= cap);
    CHECK((c[i] == 0.0 || (c[i] > 0) == (a[i] > 0)));
  }
}

TEST_CASE("pca agrees with a Jacobi eigen-decomposition") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0, 1);
  Eigen::MatrixXd data(400, 5);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double a = z(rng), b = z(rng);
    data.row(i) << 3 * a + 0.1 * z(rng), a - b, 2 * b, 0.5 * z(rng), 5.0 + 0.2 * z(rng);
  }
  const auto pca = diag::pca_embed(data, 2);
  const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  Eigen::MatrixXd vecs;
  const Eigen::MatrixXd diag_m = oracle::jacobi_eigen(cov, vecs);
  std::vector<std::pair<double, Eigen::Index>> order;
  for (Eigen::Index k = 0; k < 5; ++k) order.push_back({diag_m(k, k), k});
  std::sort(order.rbegin(), order.rend());
  CHECK_FALSE(pca.degenerate);
  for (Eigen::Index c = 0; c < 2; ++c) {
    CHECK(pca.explained_variance(c) == doctest::Approx(order[static_cast<std::size_t>(c)].first).epsilon(1e-9));
    const Eigen::VectorXd v = vecs.col(order[static_cast<std::size_t>(c)].second);
    CHECK(std::abs(std::abs(v.dot(pca.components.col(c))) - 1.0) < 1e-9);
    Eigen::Index arg;
    pca.components.col(c).cwiseAbs().maxCoeff(&arg);
    CHECK(pca.components(arg, c) > 0.0);
  }
  CHECK((pca.components.transpose() * pca.components - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
  CHECK((pca.embedding - centered * pca.components).norm() < 1e-9);

  // With all components, inner products of centered rows are preserved.
  const auto full = diag::pca_embed(data, 5);
  CHECK((full.embedding * full.embedding.transpose() - centered * centered.transpose()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pca flags rank deficiency") {
  Eigen::MatrixXd line(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) line.row(i) << i, 2.0 * i, -1.0 * i;
  const auto pca = diag::pca_embed(line, 2);
  CHECK(pca.degenerate);
  CHECK_THROWS_AS(diag::pca_embed(line, 4), nn::DimensionError);
}

TEST_CASE("logistic fit reaches a stationary point of the likelihood") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::MatrixXd x(2000, 2);
  std::vector<double> y(2000);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = 10 + 4 * z(rng);
    x(i, 1) = 0.1 * z(rng);
    const double logit = 0.3 * (x(i, 0) - 10) - 8 * x(i, 1) + 0.5;
    y[static_cast<std::size_t>(i)] = u(rng) < 1 / (1 + std::exp(-logit)) ? 1 : 0;
  }
  const auto fit = diag::fit_logistic(x, y);
  CHECK(fit.converged);
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double p = 1 / (1 + std::exp(-(fit.weights.dot(x.row(i).transpose()) + fit.bias)));
    const double r = p - y[static_cast<std::size_t>(i)];
    grad += Eigen::Vector3d(r * x(i, 0), r * x(i, 1), r);
  }
  grad /= static_cast<double>(x.rows());
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(fit.weights(0) == doctest::Approx(0.3).epsilon(0.2));
  CHECK(fit.weights(1) == doctest::Approx(-8).epsilon(0.2));
  const std::vector<double> one_class(2000, 1.0);
  CHECK_THROWS_AS(diag::fit_logistic(x, one_class), metrics::DegenerateInputError);
}

TEST_CASE("orthogonality r is the cosine of the two head weight vectors") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::MatrixXd h(1500, 6);
  std::vector<double> view(1500), path(1500);
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) = z(rng) * (j < 2 ? 3.0 : 0.3);
    view[static_cast<std::size_t>(i)] = u(rng) < 1 / (1 + std::exp(-2 * h(i, 0))) ? 1 : 0;
    path[static_cast<std::size_t>(i)] = u(rng) < 1 / (1 + std::exp(-2 * h(i, 1))) ? 1 : 0;
  }
  const auto rep = diag::orthogonality(h, view, path);
  const double cos = rep.view_head.weights.dot(rep.pathology_head.weights) /
                     (rep.view_head.weights.norm() * rep.pathology_head.weights.norm());
  CHECK(rep.r == doctest::Approx(cos).epsilon(1e-12));
  CHECK(std::abs(rep.r) < 0.3);  // driven by independent directions
  const auto same = diag::orthogonality(h, view, view);
  CHECK(same.r == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("probe on an independent nuisance stays near chance") {
  int inside = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(t));
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(5000), v(5000);
    for (auto& x : s) x = u(rng);
    for (auto& x : v) x = u(rng) < 0.5 ? 1.0 : 0.0;
    const auto rep = diag::probe_nuisance(s, v, NuisanceKind::kBinary, static_cast<std::uint64_t>(t));
    // Rounded per stratum, so the test share can be off by one.
    CHECK(rep.n_test + rep.n_train == 5000);
    CHECK(std::abs(static_cast<double>(rep.n_test) - 1500.0) <= 1.0);
    inside += rep.auroc >= 0.45 && rep.auroc <= 0.55;
  }
  CHECK(inside >= 95);
}

TEST_CASE("probe detects a nuisance the score encodes") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0, 1);
  std::vector<double> s(3000), v(3000), age(3000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    v[i] = i % 2;
    age[i] = 60 + 18 * z(rng);
    s[i] = 0.5 + 0.2 * v[i] + 0.05 * z(rng);
  }
  CHECK(diag::probe_nuisance(s, v, NuisanceKind::kBinary, 1).auroc > 0.9);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.01 * age[i] + 0.02 * z(rng);
  const auto rep = diag::probe_nuisance(s, age, NuisanceKind::kContinuous, 1);
  CHECK(rep.r2 > 0.5);
  CHECK(rep.mse > 0.0);
}

TEST_CASE("probe input validation") {
  std::vector<double> s(150, 0.5), v(150, 0.0);
  v[0] = v[1] = 1.0;
  CHECK_THROWS_AS(diag::probe_nuisance(s, v, NuisanceKind::kBinary, 0), metrics::DegenerateInputError);
  s.assign(500, 0.5);
  v.assign(500, 1.0);
  CHECK_THROWS_AS(diag::probe_nuisance(s, v, NuisanceKind::kBinary, 0), metrics::DegenerateInputError);
  std::vector<double> age(500, 40.0);
  CHECK_THROWS_AS(diag::probe_nuisance(s, age, NuisanceKind::kContinuous, 0), metrics::DegenerateInputError);
  std::vector<double> wrong(499, 0.0);
  CHECK_THROWS_AS(diag::probe_nuisance(s, wrong, NuisanceKind::kBinary, 0), std::invalid_argument);
}
