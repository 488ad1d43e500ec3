#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "afcp/data.hpp"
#include "afcp/diagnostics.hpp"

using namespace afcp;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "afcp_test_data";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

std::string error_of(const std::string& path) {
  try {
    load_csv(path);
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("friedman1 mean function") {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(10, 0.5);
  CHECK(friedman1_mean(x) == doctest::Approx(14.571068).epsilon(1e-7));
  CHECK(friedman1_mean(Eigen::VectorXd::Zero(10)) == doctest::Approx(5.0));
  CHECK_THROWS_AS(friedman1_mean(Eigen::VectorXd::Zero(4)), InputError);
}

TEST_CASE("friedman1 sample shape, range and determinism") {
  const Dataset a = friedman1(50, 0.0, 7);
  const Dataset b = friedman1(50, 0.0, 7);
  const Dataset c = friedman1(50, 0.0, 8);
  CHECK(a.n() == 50);
  CHECK(a.dim() == 10);
  CHECK(a.X.minCoeff() >= 0.0);
  CHECK(a.X.maxCoeff() < 1.0);
  CHECK(a.X == b.X);
  CHECK(a.Y == b.Y);
  CHECK(a.X != c.X);
  for (Index i = 0; i < a.n(); ++i) CHECK(a.Y(i) == friedman1_mean(a.X.row(i).transpose()));
  // noise changes outputs only
  const Dataset noisy = friedman1(50, 1.0, 7);
  CHECK(noisy.X == a.X);
  CHECK(noisy.Y != a.Y);
  CHECK_THROWS_AS(friedman1(0, 0.0, 1), InputError);
  CHECK_THROWS_AS(friedman1(5, -1.0, 1), InputError);
}

TEST_CASE("friedman1 sample mean agrees with numerical integration") {
  // E[10 sin(pi x1 x2)] by the midpoint rule, plus 20/12 + 5 + 2.5
  const int q = 400;
  double s = 0.0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) s += std::sin(std::numbers::pi * (i + 0.5) / q * (j + 0.5) / q);
  const double expected = 10.0 * s / (q * q) + 20.0 / 12.0 + 7.5;
  const Dataset d = friedman1(10000, 0.0, 123);
  const double se = std::sqrt((d.Y.array() - d.Y.mean()).square().sum() / (d.n() - 1) / d.n());
  CHECK(std::abs(d.Y.mean() - expected) <= 4.0 * se);
}

TEST_CASE("Rng draws") {
  Rng rng(5);
  double mean = 0, sq = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(n));
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  auto perm = rng.permutation(20);
  std::set<Index> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 20);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 19);
  for (int k = 0; k < 1000; ++k) CHECK(rng.below(7) < 7);
  CHECK_THROWS_AS(rng.below(0), InputError);
  CHECK(std::string(Rng::algorithm()) == "mt19937_64");
}

TEST_CASE("derived seeds are distinct and reproducible") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t r = 0; r < 1000; ++r) seeds.insert(derive_seed(42, r));
  CHECK(seeds.size() == 1000);
  CHECK(derive_seed(42, 3) == derive_seed(42, 3));
  CHECK(derive_seed(42, 3) != derive_seed(43, 3));
}

TEST_CASE("CSV round trip is exact") {
  const Dataset d = friedman1(25, 1.0, 9);
  const auto path = temp_path("roundtrip.csv");
  save_csv(path, d);
  const Dataset back = load_csv(path);
  CHECK(back.X == d.X);
  CHECK(back.Y == d.Y);
  CHECK(back.meta.feature_names == d.meta.feature_names);
  CHECK(back.meta.target_name == "y");
}

TEST_CASE("CSV with a single row") {
  const auto path = temp_path("one.csv");
  write_file(path, "a,b,target\n1.5,-2,3e1\n");
  const Dataset d = load_csv(path);
  CHECK(d.n() == 1);
  CHECK(d.dim() == 2);
  CHECK(d.Y(0) == 30.0);
  CHECK(d.meta.target_name == "target");
}

TEST_CASE("CSV errors name the line and column") {
  const auto p1 = temp_path("short.csv");
  write_file(p1, "x1,x2,y\n1,2,3\n4,5\n");
  const auto e1 = error_of(p1);
  CHECK(e1.find(":3:") != std::string::npos);
  CHECK(e1.find("missing target column 'y'") != std::string::npos);

  const auto p2 = temp_path("bad.csv");
  write_file(p2, "x1,y\n1,2\n1,abc\n");
  const auto e2 = error_of(p2);
  CHECK(e2.find(":3:") != std::string::npos);
  CHECK(e2.find("'y'") != std::string::npos);

  const auto p3 = temp_path("header.csv");
  write_file(p3, "x1\n1\n");
  CHECK(error_of(p3).find("target") != std::string::npos);

  const auto p4 = temp_path("empty.csv");
  write_file(p4, "x1,y\n");
  CHECK_FALSE(error_of(p4).empty());

  CHECK_FALSE(error_of(temp_path("does_not_exist.csv")).empty());
}

TEST_CASE("query split and subset") {
  const Dataset d = friedman1(6, 0.0, 1);
  const QuerySplit q = split_query(d, 2);
  CHECK(q.train.n() == 5);
  CHECK(q.y_query == d.Y(2));
  CHECK(q.x_query == d.X.row(2).transpose());
  CHECK(q.train.Y(2) == d.Y(3));
  CHECK_THROWS_AS(split_query(d, 6), InputError);
  CHECK_THROWS_AS(split_query(friedman1(1, 0.0, 1), 0), InputError);
  const Dataset s = subset(d, {5, 0});
  CHECK(s.Y(0) == d.Y(5));
  CHECK(s.Y(1) == d.Y(0));
  CHECK_THROWS_AS(subset(d, {9}), InputError);
}
