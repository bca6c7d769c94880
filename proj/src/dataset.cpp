#include "deconf/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace deconf {

std::string to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

std::string to_string(NuisanceKind k) {
  return k == NuisanceKind::kBinary ? "binary" : "continuous";
}

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw ParseError("unknown domain '" + s + "'");
}

NuisanceKind nuisance_kind_from_string(const std::string& s) {
  if (s == "binary") return NuisanceKind::kBinary;
  if (s == "continuous") return NuisanceKind::kContinuous;
  throw ParseError("unknown nuisance kind '" + s + "'");
}

Dataset::Dataset(int dim, NuisanceKind kind, int n_aux) : dim_(dim), n_aux_(n_aux), kind_(kind) {
  if (dim < 1) throw std::invalid_argument("dataset dimension must be positive");
  if (n_aux < 0) throw std::invalid_argument("negative auxiliary label count");
}

void Dataset::reserve(std::size_t n) {
  features_.reserve(n * static_cast<std::size_t>(dim_));
  labels_.reserve(n);
  nuisance_.reserve(n);
  group_ids_.reserve(n);
  domains_.reserve(n);
  if (n_aux_ > 0) aux_.reserve(n);
}

void Dataset::push_back(const Sample& s) {
  if (static_cast<int>(s.features.size()) != dim_) {
    throw std::invalid_argument("sample has " + std::to_string(s.features.size()) +
                                " features, dataset expects " + std::to_string(dim_));
  }
  if (s.label != 0 && s.label != 1) throw std::invalid_argument("label must be 0 or 1");
  if (kind_ == NuisanceKind::kBinary && s.nuisance != 0.0 && s.nuisance != 1.0) {
    throw std::invalid_argument("binary nuisance must be 0 or 1");
  }
  if (!std::isfinite(s.nuisance)) throw std::invalid_argument("nuisance must be finite");
  for (double f : s.features) {
    if (!std::isfinite(f)) throw std::invalid_argument("features must be finite");
  }
  if (static_cast<int>(s.aux_labels.size()) != n_aux_) {
    throw std::invalid_argument("auxiliary label count mismatch");
  }
  features_.insert(features_.end(), s.features.begin(), s.features.end());
  labels_.push_back(s.label);
  nuisance_.push_back(s.nuisance);
  group_ids_.push_back(s.group_id);
  domains_.push_back(s.domain);
  if (n_aux_ > 0) aux_.push_back(s.aux_labels);
}

Sample Dataset::sample(std::size_t i) const {
  Sample s;
  const auto offset = static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(dim_));
  s.features.assign(features_.begin() + offset, features_.begin() + offset + dim_);
  s.label = label(i);
  s.nuisance = nuisance_[i];
  s.group_id = group_ids_[i];
  s.domain = domains_[i];
  if (n_aux_ > 0) s.aux_labels = aux_[i];
  return s;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(dim_, kind_, n_aux_);
  out.meta = meta;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("subset index out of range");
    const auto offset = static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(dim_));
    out.features_.insert(out.features_.end(), features_.begin() + offset,
                         features_.begin() + offset + dim_);
    out.labels_.push_back(labels_[i]);
    out.nuisance_.push_back(nuisance_[i]);
    out.group_ids_.push_back(group_ids_[i]);
    out.domains_.push_back(domains_[i]);
    if (n_aux_ > 0) out.aux_.push_back(aux_[i]);
  }
  return out;
}

Eigen::MatrixXd Dataset::feature_rows(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), dim_);
  const auto all = features();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = all.row(static_cast<Eigen::Index>(indices[r]));
  }
  return out;
}

void Dataset::set_domain(Domain d) {
  for (auto& x : domains_) x = d;
}

bool Dataset::operator==(const Dataset& other) const {
  return dim_ == other.dim_ && n_aux_ == other.n_aux_ && kind_ == other.kind_ &&
         features_ == other.features_ && labels_ == other.labels_ &&
         nuisance_ == other.nuisance_ && group_ids_ == other.group_ids_ &&
         domains_ == other.domains_ && aux_ == other.aux_;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("line " + std::to_string(line_no) + ": malformed number '" + text + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& text, std::size_t line_no) {
  std::int64_t v = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("line " + std::to_string(line_no) + ": malformed integer '" + text + "'");
  }
  return v;
}

}  // namespace

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (int j = 0; j < dataset.dim(); ++j) out << 'f' << j << ',';
  out << "label,nuisance,group_id,domain";
  for (int k = 0; k < dataset.n_aux(); ++k) out << ",aux" << k;
  out << '\n';
  const auto x = dataset.features();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int j = 0; j < dataset.dim(); ++j) out << format_double(x(r, j)) << ',';
    out << dataset.label(i) << ',' << format_double(dataset.nuisance()[i]) << ','
        << dataset.group_ids()[i] << ',' << to_string(dataset.domains()[i]);
    if (dataset.n_aux() > 0) {
      for (int a : dataset.aux_labels()[i]) out << ',' << a;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto header = split_fields(line);
  int dim = 0;
  while (dim < static_cast<int>(header.size()) && header[dim] == "f" + std::to_string(dim)) ++dim;
  if (dim == 0) throw ParseError("header has no feature columns");
  const char* fixed[] = {"label", "nuisance", "group_id", "domain"};
  int n_aux = static_cast<int>(header.size()) - dim - 4;
  if (n_aux < 0) {
    throw ParseError("header has " + std::to_string(header.size()) + " columns, expected " +
                     std::to_string(dim + 4));
  }
  for (int k = 0; k < 4; ++k) {
    if (header[dim + k] != fixed[k]) {
      throw ParseError("header column " + std::to_string(dim + k) + " should be '" + fixed[k] +
                       "', found '" + header[dim + k] + "'");
    }
  }
  for (int k = 0; k < n_aux; ++k) {
    if (header[dim + 4 + k] != "aux" + std::to_string(k)) {
      throw ParseError("header has " + std::to_string(header.size()) + " columns, expected " +
                       std::to_string(dim + 4));
    }
  }

  std::vector<Sample> rows;
  bool binary = true;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    Sample s;
    s.features.reserve(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) s.features.push_back(parse_double(fields[j], line_no));
    const auto label = parse_int(fields[dim], line_no);
    if (label != 0 && label != 1) {
      throw ParseError("line " + std::to_string(line_no) + ": label must be 0 or 1");
    }
    s.label = static_cast<int>(label);
    s.nuisance = parse_double(fields[dim + 1], line_no);
    s.group_id = parse_int(fields[dim + 2], line_no);
    try {
      s.domain = domain_from_string(fields[dim + 3]);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (int k = 0; k < n_aux; ++k) {
      s.aux_labels.push_back(static_cast<int>(parse_int(fields[dim + 4 + k], line_no)));
    }
    if (s.nuisance != 0.0 && s.nuisance != 1.0) binary = false;
    rows.push_back(std::move(s));
  }
  Dataset ds(dim, binary ? NuisanceKind::kBinary : NuisanceKind::kContinuous, n_aux);
  ds.reserve(rows.size());
  for (const auto& s : rows) {
    try {
      ds.push_back(s);
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace deconf
