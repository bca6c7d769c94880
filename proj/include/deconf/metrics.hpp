#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace deconf::metrics {

class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  std::int64_t false_positives = 0;
  std::int64_t true_positives = 0;
};

struct RocResult {
  std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
  double auroc = 0.0;

  // Trapezoidal area under `points`, computed from the integer counts.
  double trapezoid_area() const;
};

// Mann-Whitney form with midranks for ties. Labels must be 0/1 with both present.
double auroc(std::span<const double> scores, std::span<const double> labels);

// One point per distinct threshold, scanned from the highest score down.
RocResult roc_curve(std::span<const double> scores, std::span<const double> labels);

struct KsResult {
  double d_statistic = 0.0;
  std::size_t n = 0;
  std::size_t m = 0;
};

// sup_x |F_a(x) - F_b(x)| over the pooled sample points.
KsResult ks_statistic(std::span<const double> a, std::span<const double> b);

inline constexpr std::array<double, 3> kDefaultAgeEdges{45.0, 65.0, 85.0};

struct SubgroupKs {
  int bin_a = 0;
  int bin_b = 0;
  KsResult ks;
};

// Bins are (-inf, e0), [e0, e1), ..., [e_last, inf). Returns every unordered
// pair of bins, in lexicographic order.
std::vector<SubgroupKs> pairwise_subgroup_ks(std::span<const double> scores,
                                             std::span<const double> nuisance,
                                             std::span<const double> bin_edges = kDefaultAgeEdges);

int bin_index(double value, std::span<const double> bin_edges);

double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace deconf::metrics
