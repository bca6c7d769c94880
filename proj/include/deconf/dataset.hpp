#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace deconf {

enum class Domain { kSource, kTarget };
enum class NuisanceKind { kBinary, kContinuous };

std::string to_string(Domain d);
std::string to_string(NuisanceKind k);
Domain domain_from_string(const std::string& s);
NuisanceKind nuisance_kind_from_string(const std::string& s);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  std::vector<double> features;
  int label = 0;
  double nuisance = 0.0;  // 0 = AP, 1 = PA when binary; age when continuous
  std::int64_t group_id = 0;
  Domain domain = Domain::kSource;
  std::vector<int> aux_labels;
};

struct DatasetMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column-oriented storage: one row of `features` per sample.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int dim, NuisanceKind kind, int n_aux = 0);

  void reserve(std::size_t n);
  void push_back(const Sample& s);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  int dim() const { return dim_; }
  int n_aux() const { return n_aux_; }
  NuisanceKind nuisance_kind() const { return kind_; }

  Eigen::Map<const RowMatrix> features() const {
    return {features_.data(), static_cast<Eigen::Index>(size()), dim_};
  }
  const std::vector<double>& labels() const { return labels_; }
  const std::vector<double>& nuisance() const { return nuisance_; }
  const std::vector<std::int64_t>& group_ids() const { return group_ids_; }
  const std::vector<Domain>& domains() const { return domains_; }
  const std::vector<std::vector<int>>& aux_labels() const { return aux_; }

  int label(std::size_t i) const { return static_cast<int>(labels_[i]); }
  Sample sample(std::size_t i) const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Eigen::MatrixXd feature_rows(std::span<const std::size_t> indices) const;

  void set_domain(Domain d);

  DatasetMeta meta;

  bool operator==(const Dataset& other) const;

 private:
  int dim_ = 0;
  int n_aux_ = 0;
  NuisanceKind kind_ = NuisanceKind::kBinary;
  std::vector<double> features_;  // row-major, size() x dim_
  std::vector<double> labels_;
  std::vector<double> nuisance_;
  std::vector<std::int64_t> group_ids_;
  std::vector<Domain> domains_;
  std::vector<std::vector<int>> aux_;
};

// Header `f0,...,f{d-1},label,nuisance,group_id,domain[,aux0,...]`. Floats are
// written with 17 significant digits so a round trip is bit-exact.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

}  // namespace deconf
