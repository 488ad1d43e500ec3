#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "afcp/data.hpp"
#include "afcp/kernels.hpp"
#include "afcp/losses.hpp"
#include "afcp/solver.hpp"

namespace afcp {

/// m uniformly spaced candidate outputs in [lo, hi].
class YGrid {
 public:
  YGrid(double lo, double hi, Index m);

  /// lo = min(Y) - pad * range(Y), hi = max(Y) + pad * range(Y).
  static YGrid around(const Eigen::VectorXd& Y, double pad = 0.5, Index m = 512);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  Index size() const { return m_; }
  double step() const { return (hi_ - lo_) / static_cast<double>(m_ - 1); }
  double at(Index j) const;
  /// Index of the closest grid point (clamped to the grid).
  Index nearest(double y) const;

  bool operator==(const YGrid& other) const { return lo_ == other.lo_ && hi_ == other.hi_ && m_ == other.m_; }

 private:
  double lo_;
  double hi_;
  Index m_;
};

/// Upper and lower p-values per grid point. Exact methods store the same
/// vector twice.
struct PValueCurve {
  YGrid grid;
  Eigen::VectorXd upper;
  Eigen::VectorXd lower;
  /// Named per-grid-point diagnostics (e.g. tau_test, rho1, rho2).
  std::map<std::string, Eigen::VectorXd> extras;
};

struct Interval {
  double lo;
  double hi;
};

/// Boolean mask over a grid with its maximal runs and discretized measure.
class PredictionRegion {
 public:
  PredictionRegion(YGrid grid, std::vector<bool> mask);

  /// {y : p(y) > alpha}
  static PredictionRegion from_pvalues(const YGrid& grid, const Eigen::VectorXd& pvalues, double alpha);

  const YGrid& grid() const { return grid_; }
  const std::vector<bool>& mask() const { return mask_; }
  const std::vector<Interval>& intervals() const { return intervals_; }
  /// step * (number of true cells)
  double measure() const { return grid_.step() * static_cast<double>(count_); }
  Index count() const { return count_; }
  bool empty() const { return count_ == 0; }

  /// Membership of y via the nearest grid cell.
  bool contains(double y) const { return mask_[static_cast<std::size_t>(grid_.nearest(y))]; }
  /// True when the first or last grid cell is in the region.
  bool touches_boundary() const;
  /// Cell-wise inclusion; throws InputError on grid mismatch.
  bool subset_of(const PredictionRegion& other) const;

 private:
  YGrid grid_;
  std::vector<bool> mask_;
  std::vector<Interval> intervals_;
  Index count_ = 0;
};

/// (1 + #{i : train_scores_i >= test_score}) / (n + 1)
double conformal_pvalue(const Eigen::VectorXd& train_scores, double test_score);

/// Everything needed to fit predictors for one query input.
struct ConformalSetup {
  Dataset data;
  Eigen::VectorXd x_query;
  double lambda = 1.0;
  LossSpec loss;
  KernelSpec kernel;
  SolverOptions solver;

  Index n() const { return data.n(); }
  void validate() const;
  /// Training inputs followed by the query input.
  PointMatrix augmented_points() const;
  std::shared_ptr<const GramMatrix> augmented_gram() const;
  /// Problem over the augmented Gram matrix with the given anchors and weights.
  WeightedProblem problem(std::shared_ptr<const GramMatrix> gram, double z, double y, Eigen::VectorXd weights) const;
};

/// Refit on D plus (x_query, y) for every grid y and compare the query score
/// with the training scores. Grid points are fitted independently in
/// parallel, each from a zero start.
PValueCurve full_pvalue_curve_bruteforce(const ConformalSetup& setup, const YGrid& grid);
/// Serial reference that walks the grid with warm starts.
PValueCurve full_pvalue_curve_bruteforce_serial(const ConformalSetup& setup, const YGrid& grid);
PredictionRegion full_region_bruteforce(const ConformalSetup& setup, const YGrid& grid, double alpha);

/// Exact p-value at a single candidate output (one refit).
double full_pvalue_at(const ConformalSetup& setup, double y);

/// Conformal p-value built from fixed (score, center) pairs:
///   p(y) = (1 + #{k : score_k >= |y - center_k|}) / denominator.
/// Oracle and split regions use one center; cross-conformal regions use one
/// center per fold.
struct PooledScores {
  std::vector<double> scores;
  std::vector<double> centers;
  double denominator = 1.0;

  double pvalue(double y) const;
  PValueCurve curve(const YGrid& grid) const;
  /// Exact Lebesgue measure of {y : p(y) > alpha}, computed from the
  /// breakpoints center_k +- score_k.
  double exact_measure(double alpha) const;
};

/// Single fit on D plus (x_query, y_true).
PooledScores oracle_scores(const ConformalSetup& setup, double y_true);
PredictionRegion oracle_region(const ConformalSetup& setup, double y_true, const YGrid& grid, double alpha);

/// Fit on a random split_fraction of D, calibrate on the rest.
PooledScores split_scores(const ConformalSetup& setup, double split_fraction, std::uint64_t seed);
PredictionRegion split_region(const ConformalSetup& setup, const YGrid& grid, double alpha, double split_fraction,
                              std::uint64_t seed);

/// V-fold cross-conformal; each fold is scored by the model fitted on the
/// remaining folds.
PooledScores cross_scores(const ConformalSetup& setup, Index folds, std::uint64_t seed);
/// Same with an explicit fold label per training row (labels 0..V-1).
PooledScores cross_scores(const ConformalSetup& setup, const std::vector<Index>& fold_of);
PredictionRegion cross_region(const ConformalSetup& setup, const YGrid& grid, double alpha, Index folds,
                              std::uint64_t seed);

/// Predictions at the rows of `points` of the model fitted on data rows
/// `train_rows` (query input included in the representation with zero
/// weight, so the function equals the plain fit on those rows).
Eigen::VectorXd fit_subset_predict(const ConformalSetup& setup, const std::vector<Index>& train_rows,
                                   const PointMatrix& points);

using MembershipFn = std::function<bool(double)>;

/// Measure of a region whose grid transitions are refined by bisection on
/// `inside` down to `tol`. Runs touching the grid ends are not extended.
double refined_measure(const PredictionRegion& region, const MembershipFn& inside, double tol);

struct CoverageEstimate {
  double rate = 0.0;
  Index hits = 0;
  Index reps = 0;
  double sigma = 0.0;       ///< binomial standard error at the nominal level
  double lower_3sigma = 0;  ///< 1 - alpha - 3 sigma
};

/// One synthetic instance: training data, query input, true output.
using InstanceGenerator = std::function<QuerySplit(std::uint64_t seed)>;
using RegionBuilder = std::function<PredictionRegion(const QuerySplit& instance, std::uint64_t seed)>;

/// Fraction of repetitions whose region contains the true query output.
/// Repetition r uses derive_seed(seed, r); repetitions run in parallel.
CoverageEstimate empirical_coverage(const RegionBuilder& builder, const InstanceGenerator& generator, Index reps,
                                    double alpha, std::uint64_t seed);

}  // namespace afcp
