#include "deconf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace deconf::metrics {

namespace {

std::pair<std::int64_t, std::int64_t> count_classes(std::span<const double> scores,
                                                    std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  std::int64_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw std::invalid_argument("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("scores must be finite");
    if (labels[i] == 1.0) ++pos;
  }
  const auto neg = static_cast<std::int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw DegenerateInputError("AUROC needs both classes present");
  return {pos, neg};
}

std::vector<std::size_t> order_by(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double RocResult::trapezoid_area() const {
  std::int64_t twice_area = 0;
  for (std::size_t k = 1; k < points.size(); ++k) {
    const auto dfp = points[k].false_positives - points[k - 1].false_positives;
    twice_area += dfp * (points[k].true_positives + points[k - 1].true_positives);
  }
  return static_cast<double>(twice_area) / static_cast<double>(2 * positives * negatives);
}

double auroc(std::span<const double> scores, std::span<const double> labels) {
  const auto [pos, neg] = count_classes(scores, labels);
  const auto idx = order_by(scores, false);
  // Sum over positives of twice their (1-based) midrank.
  std::int64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const auto twice_midrank = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]] == 1.0) twice_rank_sum += twice_midrank;
    }
    i = j + 1;
  }
  const std::int64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * pos * neg);
}

RocResult roc_curve(std::span<const double> scores, std::span<const double> labels) {
  const auto [pos, neg] = count_classes(scores, labels);
  const auto idx = order_by(scores, true);
  RocResult roc;
  roc.positives = pos;
  roc.negatives = neg;
  roc.points.push_back({0.0, 0.0, 0, 0});
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double threshold = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == threshold) {
      if (labels[idx[i]] == 1.0) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), fp, tp});
  }
  roc.auroc = roc.trapezoid_area();
  return roc;
}

KsResult ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("KS statistic needs two non-empty samples");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const auto n = static_cast<double>(sa.size());
  const auto m = static_cast<double>(sb.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < sa.size() || j < sb.size()) {
    double x;
    if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j])) {
      x = sa[i];
    } else {
      x = sb[j];
    }
    while (i < sa.size() && sa[i] <= x) ++i;
    while (j < sb.size() && sb[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return {d, sa.size(), sb.size()};
}

int bin_index(double value, std::span<const double> bin_edges) {
  return static_cast<int>(std::upper_bound(bin_edges.begin(), bin_edges.end(), value) -
                          bin_edges.begin());
}

std::vector<SubgroupKs> pairwise_subgroup_ks(std::span<const double> scores,
                                             std::span<const double> nuisance,
                                             std::span<const double> bin_edges) {
  if (scores.size() != nuisance.size()) {
    throw std::invalid_argument("scores and nuisance differ in length");
  }
  if (!std::is_sorted(bin_edges.begin(), bin_edges.end())) {
    throw std::invalid_argument("bin edges must be sorted");
  }
  std::vector<std::vector<double>> bins(bin_edges.size() + 1);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bins[static_cast<std::size_t>(bin_index(nuisance[i], bin_edges))].push_back(scores[i]);
  }
  for (std::size_t k = 0; k < bins.size(); ++k) {
    if (bins[k].empty()) throw DegenerateInputError("subgroup bin " + std::to_string(k) + " is empty");
  }
  std::vector<SubgroupKs> out;
  for (std::size_t p = 0; p < bins.size(); ++p) {
    for (std::size_t q = p + 1; q < bins.size(); ++q) {
      out.push_back({static_cast<int>(p), static_cast<int>(q), ks_statistic(bins[p], bins[q])});
    }
  }
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("pearson needs two equal-length samples of size >= 2");
  }
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("pearson: zero variance");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace deconf::metrics
