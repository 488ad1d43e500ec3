#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcp/kernels.hpp"

namespace afcp {

struct DatasetMeta {
  std::string generator = "none";
  std::uint64_t seed = 0;
  double noise_sd = 0.0;
  std::vector<std::string> feature_names;
  std::string target_name = "y";
};

/// Labeled regression sample: rows of X are inputs, Y the outputs.
struct Dataset {
  PointMatrix X;
  Eigen::VectorXd Y;
  DatasetMeta meta;

  Index n() const { return Y.size(); }
  Index dim() const { return X.cols(); }
  void validate() const;
};

/// Generator used everywhere randomness is needed. mt19937_64 has a fixed
/// output sequence in the standard; the distributions below are defined
/// here rather than taken from <random> so that draws agree across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// U[0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  /// Fisher-Yates permutation of 0..n-1.
  std::vector<Index> permutation(Index n);

  static constexpr const char* algorithm() { return "mt19937_64"; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Child seed for repetition `index`, independent of scheduling order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Y = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 + noise_sd * N(0,1),
/// X uniform on [0,1]^10.
double friedman1_mean(const Eigen::Ref<const Eigen::VectorXd>& x);
Dataset friedman1(Index n, double noise_sd, std::uint64_t seed);

Dataset load_csv(const std::string& path);
void save_csv(const std::string& path, const Dataset& data);

/// Training part plus the held-out query row.
struct QuerySplit {
  Dataset train;
  Eigen::VectorXd x_query;
  double y_query = 0.0;
};

QuerySplit split_query(const Dataset& data, Index row);

/// Rows selected by `rows`, in the given order.
Dataset subset(const Dataset& data, const std::vector<Index>& rows);

}  // namespace afcp
