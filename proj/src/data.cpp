#include "afcp/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "afcp/diagnostics.hpp"

namespace afcp {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void Dataset::validate() const {
  if (Y.size() < 1) throw InputError("dataset: need at least one row");
  if (X.cols() < 1) throw InputError("dataset: need at least one feature");
  if (X.rows() != Y.size()) throw InputError("dataset: X and Y row counts differ");
  if (!X.allFinite() || !Y.allFinite()) throw InputError("dataset: non-finite value");
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw InputError("Rng::below: bound must be positive");
  // rejection sampling for an unbiased result
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

std::vector<Index> Rng::permutation(Index n) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 finalizer over a combined state
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double friedman1_mean(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() < 5) throw InputError("friedman1: need at least 5 features");
  const double pi = std::numbers::pi;
  return 10.0 * std::sin(pi * x(0) * x(1)) + 20.0 * (x(2) - 0.5) * (x(2) - 0.5) + 10.0 * x(3) + 5.0 * x(4);
}

Dataset friedman1(Index n, double noise_sd, std::uint64_t seed) {
  if (n < 1) throw InputError("friedman1: n must be >= 1");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw InputError("friedman1: noise_sd must be >= 0");
  constexpr Index d = 10;
  Rng rng(seed);
  Dataset ds;
  ds.X.resize(n, d);
  ds.Y.resize(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) ds.X(i, j) = rng.uniform();
  for (Index i = 0; i < n; ++i) {
    ds.Y(i) = friedman1_mean(ds.X.row(i).transpose());
    if (noise_sd > 0.0) ds.Y(i) += noise_sd * rng.normal();
  }
  ds.meta.generator = std::string("friedman1/") + Rng::algorithm();
  ds.meta.seed = seed;
  ds.meta.noise_sd = noise_sd;
  for (Index j = 0; j < d; ++j) ds.meta.feature_names.push_back("x" + std::to_string(j + 1));
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InputError("load_csv: '" + path + "' is empty");
  const auto header = split_fields(line);
  if (header.size() < 2) {
    throw InputError("load_csv: " + path + ":1: header must name at least one feature column and a target column" +
                     (header.empty() ? std::string() : " (missing target column after '" + header.back() + "')"));
  }
  const std::size_t width = header.size();

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() != width) {
      std::ostringstream msg;
      msg << "load_csv: " << path << ":" << lineno << ": expected " << width << " fields, got " << fields.size();
      if (fields.size() + 1 == width) msg << " (missing target column '" << header.back() << "')";
      throw InputError(msg.str());
    }
    std::vector<double> row(width);
    for (std::size_t j = 0; j < width; ++j) {
      std::size_t used = 0;
      try {
        row[j] = std::stod(fields[j], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != fields[j].size() || !std::isfinite(row[j])) {
        std::ostringstream msg;
        msg << "load_csv: " << path << ":" << lineno << ": column '" << header[j] << "' has invalid value '"
            << fields[j] << "'";
        throw InputError(msg.str());
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("load_csv: '" + path + "' has no data rows");

  Dataset ds;
  const auto n = static_cast<Index>(rows.size());
  const auto d = static_cast<Index>(width - 1);
  ds.X.resize(n, d);
  ds.Y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (Index j = 0; j < d; ++j) ds.X(i, j) = row[static_cast<std::size_t>(j)];
    ds.Y(i) = row.back();
  }
  ds.meta.generator = "csv:" + path;
  ds.meta.feature_names.assign(header.begin(), header.end() - 1);
  ds.meta.target_name = header.back();
  return ds;
}

void save_csv(const std::string& path, const Dataset& data) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw InputError("save_csv: cannot open '" + path + "' for writing");
  for (Index j = 0; j < data.dim(); ++j) {
    const auto idx = static_cast<std::size_t>(j);
    out << (idx < data.meta.feature_names.size() ? data.meta.feature_names[idx] : "x" + std::to_string(j + 1))
        << ',';
  }
  out << data.meta.target_name << '\n';
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.dim(); ++j) out << format_double(data.X(i, j)) << ',';
    out << format_double(data.Y(i)) << '\n';
  }
  if (!out) throw InputError("save_csv: write failed for '" + path + "'");
}

QuerySplit split_query(const Dataset& data, Index row) {
  data.validate();
  if (row < 0 || row >= data.n()) throw InputError("split_query: row out of range");
  if (data.n() < 2) throw InputError("split_query: need at least two rows");
  std::vector<Index> keep;
  for (Index i = 0; i < data.n(); ++i)
    if (i != row) keep.push_back(i);
  return {subset(data, keep), data.X.row(row).transpose(), data.Y(row)};
}

Dataset subset(const Dataset& data, const std::vector<Index>& rows) {
  Dataset out;
  out.meta = data.meta;
  out.X.resize(static_cast<Index>(rows.size()), data.dim());
  out.Y.resize(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index r = rows[k];
    if (r < 0 || r >= data.n()) throw InputError("subset: row index out of range");
    out.X.row(static_cast<Index>(k)) = data.X.row(r);
    out.Y(static_cast<Index>(k)) = data.Y(r);
  }
  return out;
}

}  // namespace afcp
