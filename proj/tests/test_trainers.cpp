#include <doctest.h>

#include <random>
#include <set>

#include "deconf/metrics.hpp"
#include "deconf/synthgen.hpp"
#include "deconf/trainers.hpp"
#include "support.hpp"

using namespace deconf;
using train::TrainConfig;

namespace {

Dataset small_source(std::size_t n, std::uint64_t seed, std::array<double, 2> rates = {0.1, 0.4}) {
  synth::GenConfig cfg;
  cfg.n_samples = n;
  cfg.base_rate_given_v = rates;
  cfg.signal_strength = 1.0;
  cfg.dim = 8;
  cfg.seed = seed;
  return synth::generate(cfg);
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig c;
  c.max_epochs = 4;
  c.hidden_layers = {16, 8};
  c.seed = seed;
  c.val_fraction = 0.1;
  return c;
}

bool same_params(const nn::NetworkParams& a, const nn::NetworkParams& b) { return a == b; }

std::vector<double> row(const Eigen::MatrixXd& x, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) r[static_cast<std::size_t>(j)] = x(i, j);
  return r;
}

}  // namespace

TEST_CASE("group split keeps groups whole and sizes follow the fraction") {
  Dataset ds(1, NuisanceKind::kBinary);
  for (int g = 0; g < 40; ++g) {
    for (int k = 0; k < 1 + g % 3; ++k) {
      Sample s;
      s.features = {static_cast<double>(g)};
      s.label = k % 2;
      s.group_id = g;
      ds.push_back(s);
    }
  }
  const auto [tr, val] = train::split_train_val(ds, 0.25, 3);
  CHECK(tr.size() + val.size() == ds.size());
  std::set<std::int64_t> gt(tr.group_ids().begin(), tr.group_ids().end());
  std::set<std::int64_t> gv(val.group_ids().begin(), val.group_ids().end());
  CHECK(gv.size() == 10);
  for (auto g : gv) CHECK(gt.count(g) == 0);
  CHECK(gt.size() + gv.size() == 40);
  const auto [tr2, val2] = train::split_train_val(ds, 0.25, 3);
  CHECK(val2 == val);
  CHECK_THROWS_AS(train::split_train_val(ds, 0.0, 3), std::invalid_argument);
}

TEST_CASE("seed streams are distinct and stable") {
  CHECK(train::derive_seed(1, 1) == train::derive_seed(1, 1));
  CHECK(train::derive_seed(1, 1) != train::derive_seed(1, 2));
  CHECK(train::derive_seed(1, 1) != train::derive_seed(2, 1));
}

TEST_CASE("every trainer is deterministic given its seed") {
  const auto ds = small_source(1500, 4);
  auto adv = train::AdvConfig::for_kind(NuisanceKind::kBinary);
  adv.joint_epochs = 10;
  for (auto m : {train::Method::kStandard, train::Method::kAdversarial, train::Method::kInstanceWeighting,
                 train::Method::kMatching, train::Method::kCovariate}) {
    CAPTURE(train::to_string(m));
    const auto a = train::train(m, ds, quick_config(9), adv);
    const auto b = train::train(m, ds, quick_config(9), adv);
    CHECK(a.method == m);
    CHECK(same_params(a.params, b.params));
    CHECK(train::predict_scores(a, ds) == train::predict_scores(b, ds));
    const auto c = train::train(m, ds, quick_config(10), adv);
    CHECK_FALSE(same_params(a.params, c.params));
  }
}

TEST_CASE("early stopping decays the rate and restores the best epoch") {
  const auto ds = small_source(3000, 6);
  auto cfg = quick_config(2);
  cfg.max_epochs = 40;
  const auto model = train::train_standard(ds, cfg);
  const auto& ep = model.report.epochs;
  REQUIRE(!ep.empty());
  double best = ep.front().val_loss;
  int streak = 0;
  for (std::size_t k = 0; k < ep.size(); ++k) {
    if (k > 0) {
      const double expect_lr = ep[k - 1].learning_rate / (ep[k - 1].improved ? 1.0 : cfg.lr_decay_factor);
      CHECK(ep[k].learning_rate == doctest::Approx(expect_lr).epsilon(1e-15));
    }
    streak = ep[k].improved ? 0 : streak + 1;
    if (ep[k].val_loss < best) best = ep[k].val_loss;
  }
  if (model.report.stop_epoch < cfg.max_epochs) CHECK(streak == cfg.patience_epochs);
  CHECK(ep[static_cast<std::size_t>(model.report.best_epoch - 1)].val_loss == best);
  // The returned parameters are the best epoch's: re-scoring validation reproduces its loss.
  const auto [tr, val] = train::split_train_val(ds, cfg.val_fraction, cfg.seed);
  CHECK(nn::bce_loss(train::predict_scores(model, val), val.labels()) == best);
}

TEST_CASE("adversarial step with lambda 0 is the standard step") {
  const auto ds = small_source(600, 12);
  const nn::NetworkSpec spec = quick_config(0).classifier_spec(ds.dim());
  auto p1 = nn::init_params(spec, 1);
  auto p2 = p1;
  auto s1 = nn::OptimizerState::for_params(p1, 0.05);
  auto s2 = s1;
  const nn::SgdHyper hyper{0.9, 1e-4};
  std::vector<double> scores(ds.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = 0.3 + 0.001 * static_cast<double>(i % 50);
  const auto adv = train::fit_score_adversary(train::AdvConfig{}.adversary_spec, NuisanceKind::kBinary, scores,
                                              ds.nuisance(), 1, 1e-2, 64, 5);
  const Eigen::MatrixXd x = ds.features();
  for (int step = 0; step < 3; ++step) {
    const double l1 = train::classifier_step(p1, spec, s1, hyper, x, ds.labels());
    const double l2 =
        train::adversarial_classifier_step(p2, spec, s2, hyper, x, ds.labels(), ds.nuisance(), adv, 0.0);
    CHECK(l1 == l2);
  }
  CHECK(p1 == p2);
}

TEST_CASE("adversarial step descends BCE - lambda * adversary loss") {
  // Plain SGD (lr 1, no momentum, no decay) makes the update equal to the gradient.
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 6; ++trial) {
    const auto ds = small_source(40, 100 + static_cast<std::uint64_t>(trial));
    const nn::NetworkSpec spec{{ds.dim(), 6, 1}, nn::Activation::kRelu, nn::Activation::kSigmoid};
    const auto p = nn::init_params(spec, rng());
    const Eigen::MatrixXd x = ds.features();
    std::vector<double> base_scores(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) base_scores[i] = oracle::forward(p, spec, row(x, static_cast<Eigen::Index>(i)))[0];
    const auto adv = train::fit_score_adversary(nn::NetworkSpec{{1, 8, 8, 1}, nn::Activation::kRelu, nn::Activation::kSigmoid},
                                                NuisanceKind::kBinary, base_scores, ds.nuisance(), 3, 0.05, 8,
                                                rng());
    const double lambda = 0.7;
    const auto objective = [&](const nn::NetworkParams& q) {
      double bce = 0.0, adv_loss = 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const double s = oracle::forward(q, spec, row(x, static_cast<Eigen::Index>(i)))[0];
        const double a = oracle::forward(adv.params, adv.spec, {(s - adv.input_mean) / adv.input_scale})[0];
        bce += oracle::bce(s, ds.labels()[i]);
        adv_loss += oracle::bce(a, ds.nuisance()[i]);
      }
      const auto n = static_cast<double>(ds.size());
      return bce / n - lambda * adv_loss / n;
    };
    double min_pre = 1e9;
    for (std::size_t i = 0; i < ds.size(); ++i) oracle::forward(p, spec, row(x, static_cast<Eigen::Index>(i)), 0.0, &min_pre);
    if (min_pre < 1e-4) continue;

    auto q = p;
    auto state = nn::OptimizerState::for_params(q, 1.0);
    train::adversarial_classifier_step(q, spec, state, {0.0, 0.0}, x, ds.labels(), ds.nuisance(), adv, lambda);
    auto g = nn::Gradients::zeros_like(p);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      g.layers[l].weight = p.layers[l].weight - q.layers[l].weight;
      g.layers[l].bias = p.layers[l].bias - q.layers[l].bias;
    }
    CHECK(oracle::max_param_rel_error(p, g, objective) < 1e-4);
  }
}

TEST_CASE("adversarial training pushes the adversary towards chance") {
  const auto ds = small_source(4000, 21, {0.05, 0.5});
  auto cfg = quick_config(3);
  cfg.max_epochs = 10;
  auto adv = train::AdvConfig::for_kind(NuisanceKind::kBinary);
  adv.joint_epochs = 200;
  const auto model = train::train_adversarial(ds, cfg, adv);
  REQUIRE(model.adversary.has_value());
  REQUIRE(model.report.joint.size() == 200);
  const double before = std::abs(model.report.pretrained_probe_metric - 0.5);
  const double after = std::abs(model.report.joint.back().probe_metric - 0.5);
  CHECK(after < before);
}

TEST_CASE("instance weights follow the count arithmetic") {
  synth::GenConfig cfg;
  cfg.dim = 8;
  const auto ds = synth::realize_counts(synth::engineered_imbalance(100, 10000, 0.05), cfg);
  const auto t = train::compute_instance_weights(ds);
  CHECK(t.counts[1][0] == 10);
  CHECK(t.counts[1][1] == 990);
  CHECK(t.p_y[1] == doctest::Approx(0.05));
  CHECK(t.p_y_given_v[1][0] == doctest::Approx(0.001));
  CHECK(t.weight[1][0] == doctest::Approx(50.0));
  CHECK(t.weight[1][1] == doctest::Approx(0.05 / 0.099));
  CHECK(t.weight[0][0] == doctest::Approx(0.95 / 0.999));
  CHECK(t.weight[0][1] == doctest::Approx(0.95 / 0.901));
  // Reweighted, Y and V are independent: weighted P(y | v) equals P(y) in both views.
  for (std::size_t v = 0; v < 2; ++v) {
    const double pos = t.weight[1][v] * static_cast<double>(t.counts[1][v]);
    const double neg = t.weight[0][v] * static_cast<double>(t.counts[0][v]);
    CHECK(pos / (pos + neg) == doctest::Approx(0.05));
  }
  synth::ImbalanceCounts empty_cell{0, 100, 10, 90};
  CHECK_THROWS_AS(train::compute_instance_weights(synth::realize_counts(empty_cell, cfg)), std::invalid_argument);
}

TEST_CASE("weighted sampler draws in proportion to weights") {
  const std::vector<double> w{1.0, 0.0, 3.0, 6.0};
  const train::WeightedSampler sampler(w);
  std::mt19937_64 rng(1);
  std::array<int, 4> hits{};
  const int n = 100000;
  for (int k = 0; k < n; ++k) ++hits[sampler.draw(rng)];
  CHECK(hits[1] == 0);
  for (std::size_t i : {0u, 2u, 3u}) {
    const double p = w[i] / 10.0;
    CHECK(std::abs(hits[i] / double(n) - p) < 4 * std::sqrt(p * (1 - p) / n));
  }
  const std::vector<double> zeros{0.0, 0.0};
  CHECK_THROWS_AS(train::WeightedSampler{zeros}, std::invalid_argument);
  const std::vector<double> negative{1.0, -1.0};
  CHECK_THROWS_AS(train::WeightedSampler{negative}, std::invalid_argument);
}

TEST_CASE("matching equalizes base rates to within one sample") {
  synth::GenConfig cfg;
  cfg.dim = 8;
  for (double ratio : {2.0, 10.0, 100.0}) {
    const auto counts = synth::engineered_imbalance(ratio, 5000, 0.05);
    const auto ds = synth::realize_counts(counts, cfg);
    const auto m = train::match_subsample(ds, 4);
    std::array<std::array<double, 2>, 2> c{};
    for (std::size_t i = 0; i < m.size(); ++i) c[static_cast<std::size_t>(m.nuisance()[i])][static_cast<std::size_t>(m.label(i))] += 1;
    const double n0 = c[0][0] + c[0][1], n1 = c[1][0] + c[1][1];
    CHECK(c[0][1] == counts.pos_v0);  // positives are never removed
    CHECK(c[1][1] == counts.pos_v1);
    CHECK(n1 == 5000);               // the higher-rate view is untouched
    CHECK(std::abs(c[0][1] / n0 - c[1][1] / n1) < 1.0 / std::min(n0, n1));
  }
  const auto balanced = synth::realize_counts(synth::ImbalanceCounts{5, 95, 5, 95}, cfg);
  CHECK(train::match_subsample(balanced, 1).size() == balanced.size());
}

TEST_CASE("covariate model is evaluated at the training mean of V") {
  const auto ds = small_source(1500, 8);
  const auto model = train::train_covariate(ds, quick_config(5));
  REQUIRE(model.covariate.has_value());
  const double mean = std::accumulate(ds.nuisance().begin(), ds.nuisance().end(), 0.0) / ds.size();
  CHECK(std::abs(model.covariate->train_mean - mean) < 0.05);
  const auto scores = train::eval_covariate(model, ds);
  const Eigen::MatrixXd x = ds.features();
  for (Eigen::Index i = 0; i < 20; ++i) {
    const double manual =
        oracle::forward(model.params, model.spec, row(x, i), model.covariate->weight * model.covariate->train_mean)[0];
    CHECK(scores[static_cast<std::size_t>(i)] == doctest::Approx(manual).epsilon(1e-12));
  }
  // Same features, different V: identical score.
  Dataset twin(ds.dim(), NuisanceKind::kBinary);
  Sample s = ds.sample(0);
  s.nuisance = 0;
  twin.push_back(s);
  s.nuisance = 1;
  twin.push_back(s);
  const auto ts = train::predict_scores(model, twin);
  CHECK(ts[0] == ts[1]);
  CHECK_THROWS_AS(train::eval_covariate(train::train_standard(ds, quick_config(5)), ds), std::invalid_argument);
}

TEST_CASE("trainer input validation") {
  auto cfg = quick_config(0);
  cfg.initial_lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  auto adv = train::AdvConfig::for_kind(NuisanceKind::kContinuous);
  CHECK(adv.adversary_spec.output_activation == nn::Activation::kLinear);
  CHECK_THROWS_AS(train::train_adversarial(small_source(300, 1), quick_config(0), adv), std::invalid_argument);
  CHECK_THROWS_AS(train::method_from_string("bogus"), std::invalid_argument);
  for (auto m : {train::Method::kStandard, train::Method::kAdversarial, train::Method::kInstanceWeighting,
                 train::Method::kMatching, train::Method::kCovariate}) {
    CHECK(train::method_from_string(train::to_string(m)) == m);
  }
}
