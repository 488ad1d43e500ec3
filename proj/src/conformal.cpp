#include "afcp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>

#include "afcp/diagnostics.hpp"

namespace afcp {

// ---------------------------------------------------------------------------
// YGrid / PredictionRegion

YGrid::YGrid(double lo, double hi, Index m) : lo_(lo), hi_(hi), m_(m) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) throw InputError("YGrid: need finite lo < hi");
  if (m < 2) throw InputError("YGrid: need at least two points");
}

YGrid YGrid::around(const Eigen::VectorXd& Y, double pad, Index m) {
  if (Y.size() == 0) throw InputError("YGrid::around: empty output vector");
  if (!(pad >= 0.0)) throw InputError("YGrid::around: pad must be >= 0");
  const double lo = Y.minCoeff();
  const double hi = Y.maxCoeff();
  double range = hi - lo;
  if (!(range > 0.0)) range = std::max(1.0, std::abs(lo));
  return YGrid(lo - pad * range, hi + pad * range, m);
}

double YGrid::at(Index j) const {
  if (j == m_ - 1) return hi_;
  return lo_ + static_cast<double>(j) * step();
}

Index YGrid::nearest(double y) const {
  const double pos = std::round((y - lo_) / step());
  if (!(pos > 0.0)) return 0;
  if (pos >= static_cast<double>(m_ - 1)) return m_ - 1;
  return static_cast<Index>(pos);
}

PredictionRegion::PredictionRegion(YGrid grid, std::vector<bool> mask) : grid_(grid), mask_(std::move(mask)) {
  if (static_cast<Index>(mask_.size()) != grid_.size()) throw InputError("PredictionRegion: mask/grid size mismatch");
  Index j = 0;
  const Index m = grid_.size();
  while (j < m) {
    if (!mask_[static_cast<std::size_t>(j)]) {
      ++j;
      continue;
    }
    Index k = j;
    while (k + 1 < m && mask_[static_cast<std::size_t>(k + 1)]) ++k;
    intervals_.push_back({grid_.at(j), grid_.at(k)});
    count_ += k - j + 1;
    j = k + 1;
  }
}

PredictionRegion PredictionRegion::from_pvalues(const YGrid& grid, const Eigen::VectorXd& pvalues, double alpha) {
  if (pvalues.size() != grid.size()) throw InputError("from_pvalues: p-value/grid size mismatch");
  std::vector<bool> mask(static_cast<std::size_t>(grid.size()));
  for (Index j = 0; j < grid.size(); ++j) mask[static_cast<std::size_t>(j)] = pvalues(j) > alpha;
  return PredictionRegion(grid, std::move(mask));
}

bool PredictionRegion::touches_boundary() const { return mask_.front() || mask_.back(); }

bool PredictionRegion::subset_of(const PredictionRegion& other) const {
  if (!(grid_ == other.grid_)) throw InputError("subset_of: regions live on different grids");
  for (std::size_t j = 0; j < mask_.size(); ++j)
    if (mask_[j] && !other.mask_[j]) return false;
  return true;
}

double conformal_pvalue(const Eigen::VectorXd& train_scores, double test_score) {
  Index count = 0;
  for (Index i = 0; i < train_scores.size(); ++i)
    if (train_scores(i) >= test_score) ++count;
  return static_cast<double>(1 + count) / static_cast<double>(train_scores.size() + 1);
}

// ---------------------------------------------------------------------------
// ConformalSetup

void ConformalSetup::validate() const {
  data.validate();
  if (x_query.size() != data.dim()) throw InputError("ConformalSetup: query dimension differs from data");
  if (!x_query.allFinite()) throw InputError("ConformalSetup: non-finite query input");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("ConformalSetup: lambda must be positive");
  loss.validate();
}

PointMatrix ConformalSetup::augmented_points() const {
  PointMatrix pts(data.n() + 1, data.dim());
  pts.topRows(data.n()) = data.X;
  pts.row(data.n()) = x_query.transpose();
  return pts;
}

std::shared_ptr<const GramMatrix> ConformalSetup::augmented_gram() const {
  validate();
  return std::make_shared<const GramMatrix>(gram(kernel, augmented_points()));
}

WeightedProblem ConformalSetup::problem(std::shared_ptr<const GramMatrix> g, double z, double y,
                                        Eigen::VectorXd weights) const {
  return make_problem(std::move(g), data.Y, z, y, std::move(weights), lambda, loss);
}

// ---------------------------------------------------------------------------
// Brute-force full conformal

namespace {

// p-value of candidate y from a fit on D plus (x_query, y).
double pvalue_from_fit(const Predictor& p, double y) {
  const Eigen::VectorXd f = p.fitted();
  const Index n = p.problem.n();
  Eigen::VectorXd scores(n);
  for (Index i = 0; i < n; ++i) scores(i) = score(p.problem.targets(i), f(i));
  return conformal_pvalue(scores, score(y, f(n)));
}

std::string grid_error(Index j, double y, const std::exception& e) {
  std::ostringstream msg;
  msg << "brute-force fit failed at grid index " << j << " (y = " << y << "): " << e.what();
  return msg.str();
}

}  // namespace

PValueCurve full_pvalue_curve_bruteforce(const ConformalSetup& setup, const YGrid& grid) {
  const auto g = setup.augmented_gram();
  const Index n = setup.n();
  const Index m = grid.size();
  Eigen::VectorXd p(m);
  std::string failure;
  std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
  for (Index j = 0; j < m; ++j) {
    const double y = grid.at(j);
    try {
      const Predictor fitted = fit(setup.problem(g, y, y, WeightedProblem::weights_w(n)), setup.solver);
      p(j) = pvalue_from_fit(fitted, y);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (failure.empty()) failure = grid_error(j, y, e);
      p(j) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);
  return {grid, p, p, {}};
}

PValueCurve full_pvalue_curve_bruteforce_serial(const ConformalSetup& setup, const YGrid& grid) {
  const auto g = setup.augmented_gram();
  const Index n = setup.n();
  Eigen::VectorXd p(grid.size());
  std::optional<Eigen::VectorXd> warm;
  for (Index j = 0; j < grid.size(); ++j) {
    const double y = grid.at(j);
    try {
      Predictor fitted = fit(setup.problem(g, y, y, WeightedProblem::weights_w(n)), setup.solver, warm);
      p(j) = pvalue_from_fit(fitted, y);
      warm = std::move(fitted.coeffs);
    } catch (const std::exception& e) {
      throw std::runtime_error(grid_error(j, y, e));
    }
  }
  return {grid, p, p, {}};
}

PredictionRegion full_region_bruteforce(const ConformalSetup& setup, const YGrid& grid, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  const auto curve = full_pvalue_curve_bruteforce(setup, grid);
  return PredictionRegion::from_pvalues(grid, curve.upper, alpha);
}

double full_pvalue_at(const ConformalSetup& setup, double y) {
  const auto g = setup.augmented_gram();
  const Predictor fitted = fit(setup.problem(g, y, y, WeightedProblem::weights_w(setup.n())), setup.solver);
  return pvalue_from_fit(fitted, y);
}

// ---------------------------------------------------------------------------
// Pooled-score baselines

double PooledScores::pvalue(double y) const {
  Index count = 0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (scores[k] >= score(y, centers[k])) ++count;
  return static_cast<double>(1 + count) / denominator;
}

PValueCurve PooledScores::curve(const YGrid& grid) const {
  Eigen::VectorXd p(grid.size());
  for (Index j = 0; j < grid.size(); ++j) p(j) = pvalue(grid.at(j));
  return {grid, p, p, {}};
}

double PooledScores::exact_measure(double alpha) const {
  // p(y) > alpha  <=>  coverage count(y) >= need
  const double threshold = alpha * denominator - 1.0;
  const auto need = static_cast<long long>(std::floor(threshold)) + 1;
  if (need <= 0) return std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, int>> events;
  events.reserve(2 * scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    events.emplace_back(centers[k] - scores[k], +1);
    events.emplace_back(centers[k] + scores[k], -1);
  }
  std::sort(events.begin(), events.end());
  double total = 0.0;
  long long depth = 0;
  double start = 0.0;
  for (const auto& [pos, delta] : events) {
    const long long before = depth;
    depth += delta;
    if (before < need && depth >= need) start = pos;
    if (before >= need && depth < need) total += pos - start;
  }
  return total;
}

Eigen::VectorXd fit_subset_predict(const ConformalSetup& setup, const std::vector<Index>& train_rows,
                                   const PointMatrix& points) {
  if (train_rows.empty()) throw InputError("fit_subset_predict: empty training subset");
  ConformalSetup sub = setup;
  sub.data = subset(setup.data, train_rows);
  const auto n_tr = static_cast<double>(train_rows.size());
  const auto g = sub.augmented_gram();
  // weights (n_tr+1)/n_tr on the training rows make the data term an
  // average over D_train
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(sub.n() + 2);
  weights.head(sub.n()).setConstant((n_tr + 1.0) / n_tr);
  const Predictor fitted = fit(sub.problem(g, 0.0, 0.0, std::move(weights)), sub.solver);
  const Eigen::MatrixXd cross = kernel_cross(sub.kernel, points, sub.augmented_points());
  return cross * fitted.coeffs;
}

PooledScores oracle_scores(const ConformalSetup& setup, double y_true) {
  const auto g = setup.augmented_gram();
  const Index n = setup.n();
  const Predictor fitted = fit(setup.problem(g, y_true, y_true, WeightedProblem::weights_w(n)), setup.solver);
  const Eigen::VectorXd f = fitted.fitted();
  PooledScores out;
  out.denominator = static_cast<double>(n + 1);
  for (Index i = 0; i < n; ++i) {
    out.scores.push_back(score(setup.data.Y(i), f(i)));
    out.centers.push_back(f(n));
  }
  return out;
}

PredictionRegion oracle_region(const ConformalSetup& setup, double y_true, const YGrid& grid, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  return PredictionRegion::from_pvalues(grid, oracle_scores(setup, y_true).curve(grid).upper, alpha);
}

PooledScores split_scores(const ConformalSetup& setup, double split_fraction, std::uint64_t seed) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw InputError("split: fraction must lie in (0, 1)");
  const Index n = setup.n();
  const auto n_train = static_cast<Index>(std::llround(split_fraction * static_cast<double>(n)));
  if (n_train < 1) throw InputError("split: proper training set is empty");
  if (n - n_train < 1) throw InputError("split: calibration set is empty");

  Rng rng(seed);
  const auto perm = rng.permutation(n);
  std::vector<Index> train(perm.begin(), perm.begin() + n_train);
  std::vector<Index> cal(perm.begin() + n_train, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(cal.begin(), cal.end());

  PointMatrix pts(static_cast<Index>(cal.size()) + 1, setup.data.dim());
  for (std::size_t k = 0; k < cal.size(); ++k) pts.row(static_cast<Index>(k)) = setup.data.X.row(cal[k]);
  pts.row(pts.rows() - 1) = setup.x_query.transpose();
  const Eigen::VectorXd pred = fit_subset_predict(setup, train, pts);

  PooledScores out;
  out.denominator = static_cast<double>(cal.size() + 1);
  const double center = pred(pred.size() - 1);
  for (std::size_t k = 0; k < cal.size(); ++k) {
    out.scores.push_back(score(setup.data.Y(cal[k]), pred(static_cast<Index>(k))));
    out.centers.push_back(center);
  }
  return out;
}

PredictionRegion split_region(const ConformalSetup& setup, const YGrid& grid, double alpha, double split_fraction,
                              std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  return PredictionRegion::from_pvalues(grid, split_scores(setup, split_fraction, seed).curve(grid).upper, alpha);
}

PooledScores cross_scores(const ConformalSetup& setup, const std::vector<Index>& fold_of) {
  const Index n = setup.n();
  if (static_cast<Index>(fold_of.size()) != n) throw InputError("cross: one fold label per training row required");
  const Index folds = *std::max_element(fold_of.begin(), fold_of.end()) + 1;
  if (folds < 2) throw InputError("cross: need at least two folds");

  PooledScores out;
  out.denominator = static_cast<double>(n + 1);
  for (Index v = 0; v < folds; ++v) {
    std::vector<Index> train, held;
    for (Index i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == v ? held : train).push_back(i);
    if (held.empty()) continue;
    PointMatrix pts(static_cast<Index>(held.size()) + 1, setup.data.dim());
    for (std::size_t k = 0; k < held.size(); ++k) pts.row(static_cast<Index>(k)) = setup.data.X.row(held[k]);
    pts.row(pts.rows() - 1) = setup.x_query.transpose();
    const Eigen::VectorXd pred = fit_subset_predict(setup, train, pts);
    const double center = pred(pred.size() - 1);
    for (std::size_t k = 0; k < held.size(); ++k) {
      out.scores.push_back(score(setup.data.Y(held[k]), pred(static_cast<Index>(k))));
      out.centers.push_back(center);
    }
  }
  return out;
}

PooledScores cross_scores(const ConformalSetup& setup, Index folds, std::uint64_t seed) {
  const Index n = setup.n();
  if (folds < 2) throw InputError("cross: need at least two folds");
  if (folds > n) throw InputError("cross: more folds than training rows");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  std::vector<Index> fold_of(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) fold_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k % folds;
  return cross_scores(setup, fold_of);
}

PredictionRegion cross_region(const ConformalSetup& setup, const YGrid& grid, double alpha, Index folds,
                              std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  return PredictionRegion::from_pvalues(grid, cross_scores(setup, folds, seed).curve(grid).upper, alpha);
}

// ---------------------------------------------------------------------------
// Refined measure and coverage

namespace {

// Boundary between an outside point `out` and an inside point `in`.
double bisect_boundary(const MembershipFn& inside, double out, double in, double tol) {
  while (std::abs(in - out) > tol) {
    const double mid = 0.5 * (in + out);
    if (inside(mid))
      in = mid;
    else
      out = mid;
  }
  return 0.5 * (in + out);
}

}  // namespace

double refined_measure(const PredictionRegion& region, const MembershipFn& inside, double tol) {
  if (!(tol > 0.0)) throw InputError("refined_measure: tol must be positive");
  const YGrid& grid = region.grid();
  const auto& mask = region.mask();
  const Index m = grid.size();
  double total = 0.0;
  Index j = 0;
  while (j < m) {
    if (!mask[static_cast<std::size_t>(j)]) {
      ++j;
      continue;
    }
    Index k = j;
    while (k + 1 < m && mask[static_cast<std::size_t>(k + 1)]) ++k;
    const double left = j == 0 ? grid.at(0) : bisect_boundary(inside, grid.at(j - 1), grid.at(j), tol);
    const double right = k == m - 1 ? grid.at(m - 1) : bisect_boundary(inside, grid.at(k + 1), grid.at(k), tol);
    total += right - left;
    j = k + 1;
  }
  return total;
}

CoverageEstimate empirical_coverage(const RegionBuilder& builder, const InstanceGenerator& generator, Index reps,
                                    double alpha, std::uint64_t seed) {
  if (reps < 1) throw InputError("empirical_coverage: reps must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  std::vector<char> hit(static_cast<std::size_t>(reps), 0);
  std::exception_ptr failure;
  std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
  for (Index r = 0; r < reps; ++r) {
    try {
      const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(r));
      const QuerySplit inst = generator(s);
      const PredictionRegion region = builder(inst, derive_seed(s, 1));
      hit[static_cast<std::size_t>(r)] = region.contains(inst.y_query) ? 1 : 0;
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  CoverageEstimate est;
  est.reps = reps;
  for (char h : hit) est.hits += h;
  est.rate = static_cast<double>(est.hits) / static_cast<double>(reps);
  est.sigma = std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(reps));
  est.lower_3sigma = 1.0 - alpha - 3.0 * est.sigma;
  return est;
}

}  // namespace afcp
