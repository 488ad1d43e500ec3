#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "afcp/conformal.hpp"
#include "afcp/diagnostics.hpp"
#include "test_util.hpp"

using namespace afcp;

namespace {

ConformalSetup squared_setup(Index n, double lambda, std::uint64_t seed) {
  return testing::friedman_setup(n, lambda, LossSpec::squared(), seed);
}

// Full conformal p-value for squared loss computed from the ridge closed form.
// Returns the p-value and the smallest |S_i - S_{n+1}| (to detect near ties).
std::pair<double, double> ridge_pvalue(const ConformalSetup& s, double y) {
  const Index n = s.n();
  const Eigen::MatrixXd k = gram(s.kernel, s.augmented_points()).entries();
  Eigen::VectorXd yt(n + 1);
  yt.head(n) = s.data.Y;
  yt(n) = y;
  const Eigen::MatrixXd a = k + s.lambda * static_cast<double>(n + 1) * Eigen::MatrixXd::Identity(n + 1, n + 1);
  const Eigen::VectorXd f = k * a.ldlt().solve(yt);
  const double test = std::abs(y - f(n));
  Index count = 0;
  double gap = INFINITY;
  for (Index i = 0; i < n; ++i) {
    const double si = std::abs(s.data.Y(i) - f(i));
    if (si >= test) ++count;
    gap = std::min(gap, std::abs(si - test));
  }
  return {static_cast<double>(1 + count) / static_cast<double>(n + 1), gap};
}

}  // namespace

TEST_CASE("conformal p-value examples") {
  Eigen::VectorXd s(3);
  s << 1.0, 2.0, 3.0;
  CHECK(conformal_pvalue(s, 1.5) == doctest::Approx(0.75));
  CHECK(conformal_pvalue(s, 0.0) == doctest::Approx(1.0));
  CHECK(conformal_pvalue(s, 10.0) == doctest::Approx(0.25));
  CHECK(conformal_pvalue(s, 2.0) == doctest::Approx(0.75));  // ties count
}

TEST_CASE("YGrid geometry") {
  const YGrid g(0.0, 1.0, 11);
  CHECK(g.step() == doctest::Approx(0.1));
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(10) == 1.0);
  CHECK(g.nearest(0.34) == 3);
  CHECK(g.nearest(-5.0) == 0);
  CHECK(g.nearest(5.0) == 10);
  CHECK_THROWS_AS(YGrid(1.0, 1.0, 5), InputError);
  CHECK_THROWS_AS(YGrid(0.0, 1.0, 1), InputError);
  Eigen::VectorXd Y(3);
  Y << 1.0, 3.0, 2.0;
  const YGrid a = YGrid::around(Y, 0.5, 5);
  CHECK(a.lo() == doctest::Approx(0.0));
  CHECK(a.hi() == doctest::Approx(4.0));
}

TEST_CASE("PredictionRegion runs and measure") {
  const YGrid g(0.0, 1.0, 11);
  std::vector<bool> mask(11, false);
  for (int j : {2, 3, 4, 7, 8}) mask[static_cast<std::size_t>(j)] = true;
  const PredictionRegion r(g, mask);
  CHECK(r.count() == 5);
  CHECK(r.measure() == doctest::Approx(0.5));
  REQUIRE(r.intervals().size() == 2);
  CHECK(r.intervals()[0].lo == doctest::Approx(0.2));
  CHECK(r.intervals()[0].hi == doctest::Approx(0.4));
  CHECK(r.intervals()[1].lo == doctest::Approx(0.7));
  CHECK(r.contains(0.31));
  CHECK_FALSE(r.contains(0.56));
  CHECK_FALSE(r.touches_boundary());
  std::vector<bool> all(11, true);
  const PredictionRegion full(g, all);
  CHECK(full.touches_boundary());
  CHECK(r.subset_of(full));
  CHECK_FALSE(full.subset_of(r));
  CHECK_THROWS_AS(r.subset_of(PredictionRegion(YGrid(0.0, 2.0, 11), all)), InputError);
  CHECK_THROWS_AS(PredictionRegion(g, std::vector<bool>(3, true)), InputError);
}

TEST_CASE("brute force matches the squared-loss closed form") {
  for (Index n : {3, 6, 10}) {
    for (double lambda : {0.01, 0.5}) {
      const auto s = squared_setup(n, lambda, 100 + static_cast<std::uint64_t>(n));
      const YGrid grid = YGrid::around(s.data.Y, 0.5, 101);
      const auto curve = full_pvalue_curve_bruteforce(s, grid);
      Index mismatched = 0;
      for (Index j = 0; j < grid.size(); ++j) {
        const auto [p, gap] = ridge_pvalue(s, grid.at(j));
        if (curve.upper(j) != doctest::Approx(p).epsilon(1e-12)) {
          ++mismatched;
          CHECK(gap < 1e-7);  // only acceptable at numerical ties
        }
      }
      CHECK(mismatched <= 1);
      CHECK(full_pvalue_at(s, grid.at(17)) == curve.upper(17));
    }
  }
}

TEST_CASE("parallel brute force equals the warm-started serial walk") {
  const auto s = testing::friedman_setup(12, 0.1, LossSpec::logcosh(), 3);
  const YGrid grid = YGrid::around(s.data.Y, 0.5, 81);
  const auto par = full_pvalue_curve_bruteforce(s, grid);
  const auto ser = full_pvalue_curve_bruteforce_serial(s, grid);
  CHECK((par.upper - ser.upper).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("brute-force region: trivial levels and monotonicity in alpha") {
  const auto s = testing::friedman_setup(9, 0.2, LossSpec::pseudo_huber(), 4);
  const YGrid grid = YGrid::around(s.data.Y, 0.5, 61);
  // alpha < 1/(n+1): every p-value is at least 1/(n+1)
  CHECK(full_region_bruteforce(s, grid, 0.05).count() == grid.size());
  const auto r1 = full_region_bruteforce(s, grid, 0.1);
  const auto r2 = full_region_bruteforce(s, grid, 0.3);
  const auto r3 = full_region_bruteforce(s, grid, 0.6);
  CHECK(r2.subset_of(r1));
  CHECK(r3.subset_of(r2));
  // p = 1 wherever the test score is the smallest, so the region stays nonempty
  const auto r4 = full_region_bruteforce(s, grid, 0.9999);
  CHECK_FALSE(r4.empty());
  CHECK(r4.subset_of(r3));
  CHECK_THROWS_AS(full_region_bruteforce(s, grid, 0.0), InputError);
}

TEST_CASE("pooled scores: hand-computed p-value and exact measure") {
  PooledScores two_folds{{1.0, 2.0, 0.5, 3.0}, {0.0, 0.0, 1.0, 1.0}, 5.0};
  // y = 1.5: fold A residual 1.5 -> {2}; fold B residual 0.5 -> {0.5, 3}
  CHECK(two_folds.pvalue(1.5) == doctest::Approx(0.8));

  PooledScores oracle;
  oracle.denominator = 10.0;
  for (int k = 1; k <= 9; ++k) {
    oracle.scores.push_back(k);
    oracle.centers.push_back(0.0);
  }
  // p > 0.2 <=> at least two scores >= |y| <=> |y| <= 8
  CHECK(oracle.exact_measure(0.2) == doctest::Approx(16.0));
  CHECK(oracle.exact_measure(0.05) == INFINITY);
  // p > 0.95 <=> all nine scores >= |y| <=> |y| <= 1
  CHECK(oracle.exact_measure(0.95) == doctest::Approx(2.0));
}

TEST_CASE("oracle region is the quantile interval around the oracle prediction") {
  const auto s = testing::friedman_setup(19, 0.1, LossSpec::logcosh(), 5);
  const double y_true = 14.0;
  const auto sc = oracle_scores(s, y_true);
  std::vector<double> sorted = sc.scores;
  std::sort(sorted.begin(), sorted.end());
  const double alpha = 0.1;
  // need #{S_i >= |y - c|} >= 2, so the half-width is the second largest score
  const double q = sorted[sorted.size() - 2];
  CHECK(sc.exact_measure(alpha) == doctest::Approx(2.0 * q).epsilon(1e-12));
  const YGrid grid(sc.centers[0] - 3 * q, sc.centers[0] + 3 * q, 601);
  const auto region = oracle_region(s, y_true, grid, alpha);
  REQUIRE(region.intervals().size() == 1);
  CHECK(std::abs(region.intervals()[0].lo - (sc.centers[0] - q)) <= grid.step() * (1 + 1e-9));
  CHECK(std::abs(region.intervals()[0].hi - (sc.centers[0] + q)) <= grid.step() * (1 + 1e-9));
  // grid refinement moves the grid measure by at most two steps
  const YGrid fine(grid.lo(), grid.hi(), 1201);
  const auto region_fine = oracle_region(s, y_true, fine, alpha);
  CHECK(std::abs(region_fine.measure() - region.measure()) <= 2.0 * grid.step() + 1e-12);
}

TEST_CASE("subset fits equal fits on the subset alone") {
  const auto s = testing::friedman_setup(10, 0.3, LossSpec::logcosh(), 6);
  const std::vector<Index> rows{0, 2, 3, 7, 9};
  const PointMatrix pts = s.data.X;
  const Eigen::VectorXd pred = fit_subset_predict(s, rows, pts);
  // reference: a plain unweighted problem on the five rows, the query row dropped
  const Dataset sub = subset(s.data, rows);
  const auto g = std::make_shared<const GramMatrix>(gram(s.kernel, sub.X));
  // the last training row plays the anchor role so the data term is averaged over 5 rows
  const auto p = make_problem(g, sub.Y.head(4), sub.Y(4), 0.0, WeightedProblem::weights_u(4), s.lambda, s.loss);
  const Predictor f = fit(p);
  const Eigen::VectorXd ref = kernel_cross(s.kernel, pts, sub.X) * f.coeffs;
  CHECK((pred - ref).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_THROWS_AS(fit_subset_predict(s, {}, pts), InputError);
}

TEST_CASE("split conformal") {
  const auto s = testing::friedman_setup(20, 0.1, LossSpec::logcosh(), 7);
  const auto sc = split_scores(s, 0.5, 99);
  CHECK(sc.scores.size() == 10);
  CHECK(sc.denominator == 11.0);
  const auto again = split_scores(s, 0.5, 99);
  CHECK(sc.scores == again.scores);
  CHECK_THROWS_AS(split_scores(testing::friedman_setup(3, 0.1, LossSpec::logcosh(), 7), 0.9, 1), InputError);
  CHECK_THROWS_AS(split_scores(s, 1.0, 1), InputError);
}

TEST_CASE("cross conformal folds") {
  const auto s = testing::friedman_setup(4, 0.2, LossSpec::logcosh(), 8);
  const std::vector<Index> labels{0, 1, 0, 1};
  const auto sc = cross_scores(s, labels);
  CHECK(sc.denominator == 5.0);
  REQUIRE(sc.scores.size() == 4);
  // frozen-fit enumeration: fold 0 = rows {0, 2}, scored by the fit on {1, 3}
  PointMatrix held(3, s.data.dim());
  held.row(0) = s.data.X.row(0);
  held.row(1) = s.data.X.row(2);
  held.row(2) = s.x_query.transpose();
  const Eigen::VectorXd pred = fit_subset_predict(s, {1, 3}, held);
  CHECK(sc.scores[0] == doctest::Approx(std::abs(s.data.Y(0) - pred(0))));
  CHECK(sc.scores[1] == doctest::Approx(std::abs(s.data.Y(2) - pred(1))));
  CHECK(sc.centers[0] == doctest::Approx(pred(2)));

  // relabeling folds does not change the region
  const YGrid grid = YGrid::around(s.data.Y, 1.0, 201);
  const std::vector<Index> swapped{1, 0, 1, 0};
  const auto a = PredictionRegion::from_pvalues(grid, cross_scores(s, labels).curve(grid).upper, 0.3);
  const auto b = PredictionRegion::from_pvalues(grid, cross_scores(s, swapped).curve(grid).upper, 0.3);
  CHECK(a.mask() == b.mask());

  // leave-one-out: one score per fold
  const auto loo = cross_scores(s, 4, 1);
  CHECK(loo.scores.size() == 4);
  CHECK_THROWS_AS(cross_scores(s, 5, 1), InputError);
  CHECK_THROWS_AS(cross_scores(s, 1, 1), InputError);
}

TEST_CASE("refined measure bisects the boundaries") {
  const YGrid grid(-3.0, 3.0, 7);
  auto inside = [](double y) { return std::abs(y) < 1.2345; };
  std::vector<bool> mask(7);
  for (Index j = 0; j < 7; ++j) mask[static_cast<std::size_t>(j)] = inside(grid.at(j));
  const PredictionRegion r(grid, mask);
  CHECK(r.measure() == doctest::Approx(3.0));
  CHECK(refined_measure(r, inside, 1e-12) == doctest::Approx(2.469).epsilon(1e-10));
  // a run touching the grid end is not extended past it
  auto right = [](double y) { return y > 1.5; };
  std::vector<bool> mr(7);
  for (Index j = 0; j < 7; ++j) mr[static_cast<std::size_t>(j)] = right(grid.at(j));
  CHECK(refined_measure(PredictionRegion(grid, mr), right, 1e-12) == doctest::Approx(1.5));
  CHECK_THROWS_AS(refined_measure(r, inside, 0.0), InputError);
}

TEST_CASE("coverage of trivial regions") {
  auto gen = [](std::uint64_t seed) { return split_query(friedman1(6, 0.0, seed), 5); };
  const YGrid grid(-100.0, 100.0, 11);
  auto full = [&](const QuerySplit&, std::uint64_t) { return PredictionRegion(grid, std::vector<bool>(11, true)); };
  auto none = [&](const QuerySplit&, std::uint64_t) { return PredictionRegion(grid, std::vector<bool>(11, false)); };
  const auto c1 = empirical_coverage(full, gen, 20, 0.1, 1);
  CHECK(c1.rate == 1.0);
  CHECK(c1.hits == 20);
  CHECK(c1.sigma == doctest::Approx(std::sqrt(0.09 / 20)));
  CHECK(empirical_coverage(none, gen, 20, 0.1, 1).rate == 0.0);
  CHECK_THROWS_AS(empirical_coverage(full, gen, 0, 0.1, 1), InputError);
}

TEST_CASE("split conformal coverage is near nominal") {
  const double alpha = 0.1;
  const Index n = 40;
  auto gen = [&](std::uint64_t seed) { return split_query(friedman1(n + 1, 1.0, seed), n); };
  auto builder = [&](const QuerySplit& q, std::uint64_t seed) {
    ConformalSetup s{q.train, q.x_query, 0.1, LossSpec::logcosh(), KernelSpec{}, {}};
    const auto sc = split_scores(s, 0.5, seed);
    const YGrid grid(sc.centers[0] - 40.0, sc.centers[0] + 40.0, 4001);
    return PredictionRegion::from_pvalues(grid, sc.curve(grid).upper, alpha);
  };
  const auto c = empirical_coverage(builder, gen, 300, alpha, 2024);
  CHECK(c.rate >= c.lower_3sigma);
  CHECK(c.rate <= 1.0 - alpha + 1.0 / 21.0 + 3.0 * c.sigma);
}
