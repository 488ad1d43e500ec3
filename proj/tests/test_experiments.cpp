#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "afcp/diagnostics.hpp"
#include "afcp/experiments.hpp"
#include "test_util.hpp"

using namespace afcp;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "afcp_test_experiments" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("lambda rule") {
  LambdaRule rule;
  CHECK(rule.at(129) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rule.at(1032) / rule.at(129) == doctest::Approx(std::pow(8.0, -0.33)));
  rule.value = 0.7;
  CHECK(rule.at(5) == 0.7);
  LambdaRule custom{std::nullopt, 0.5, 2.0};
  CHECK(custom.at(4) == doctest::Approx(1.0));
}

TEST_CASE("log-spaced n schedules") {
  const auto desk = log_spaced_counts(32, 256, 8);
  REQUIRE(desk.size() == 8);
  CHECK(desk.front() == 32);
  CHECK(desk.back() == 256);
  for (std::size_t k = 1; k < desk.size(); ++k) CHECK(desk[k] > desk[k - 1]);
  const auto full = log_spaced_counts(128, 1024, 15);
  CHECK(full.size() == 15);
  CHECK(full.back() == 1024);
  CHECK_THROWS_AS(log_spaced_counts(10, 5, 3), InputError);
}

TEST_CASE("log-log fit recovers an exact power law") {
  std::vector<double> x, y;
  for (double n : {10.0, 20.0, 40.0, 80.0}) {
    x.push_back(n);
    y.push_back(3.0 * std::pow(n, -0.75));
  }
  const auto fit = loglog_fit(x, y);
  CHECK(fit.slope == doctest::Approx(-0.75).epsilon(1e-12));
  CHECK(std::exp(fit.intercept) == doctest::Approx(3.0).epsilon(1e-12));
  y[1] = 0.0;  // skipped
  CHECK(loglog_fit(x, y).points == 3);
  CHECK(std::isnan(loglog_fit({1.0}, {1.0}).slope));
}

TEST_CASE("config parsing") {
  const auto base = default_config("compare", true);
  CHECK(base.repetitions == 50);
  CHECK(base.n == 200);
  const json j = json::parse(R"({"alpha": 0.2, "loss": {"family": "pseudo_huber", "a": 2.0},
                                 "kernel": {"family": "gaussian_rbf", "bandwidth": 0.3},
                                 "grid": {"m": 64, "lo": -5, "hi": 5}, "lambda": {"value": 0.1},
                                 "n_schedule": {"min": 10, "max": 40, "count": 3}})");
  const auto cfg = parse_config(j, base);
  CHECK(cfg.alpha == 0.2);
  CHECK(cfg.loss.family == LossFamily::pseudo_huber);
  CHECK(cfg.loss.a == 2.0);
  CHECK(cfg.kernel.family == KernelFamily::gaussian_rbf);
  CHECK(*cfg.kernel.bandwidth == 0.3);
  CHECK(cfg.grid.m == 64);
  CHECK(*cfg.grid.lo == -5.0);
  CHECK(*cfg.lambda.value == 0.1);
  CHECK(cfg.n_values == std::vector<Index>{10, 20, 40});

  CHECK_THROWS_AS(parse_config(json::parse(R"({"alpah": 0.2})"), base), InputError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"loss": {"scale": 1}})"), base), InputError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"alpha": "high"})"), base), InputError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"methods": ["Magic"]})"), base).validate(), InputError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"alpha": 1.5})"), base).validate(), InputError);
  CHECK_THROWS_AS(default_config("bogus", false), InputError);
}

TEST_CASE("config JSON round trip and hash") {
  auto cfg = default_config("sweep", true);
  const auto back = parse_config(to_json(cfg), default_config("region", false));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);
  auto moved = cfg;
  moved.output_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(cfg));
  auto changed = cfg;
  changed.alpha = 0.05;
  CHECK(config_hash(changed) != config_hash(cfg));
}

TEST_CASE("lambda selection: single candidate, ties and a monotone family") {
  CHECK(select_lambda({0.3}, [](double) { return 1.0; }) == 0.3);
  CHECK(select_lambda({0.1, 0.2, 0.5}, [](double) { return 4.0; }) == 0.5);
  CHECK_THROWS_AS(select_lambda({}, [](double) { return 1.0; }), InputError);

  // pooled scores lambda * {1..10}; p > 0.1 needs one score >= |y|, so the
  // measure is 2 * lambda * 10, increasing in lambda
  auto measure = [](double lambda) {
    PooledScores p;
    p.denominator = 11.0;
    for (int k = 1; k <= 10; ++k) {
      p.scores.push_back(lambda * k);
      p.centers.push_back(0.0);
    }
    return p.exact_measure(0.1);
  };
  std::vector<double> values;
  CHECK(select_lambda({0.05, 0.2, 1.0, 3.0}, measure, &values) == 0.05);
  for (std::size_t k = 1; k < values.size(); ++k) CHECK(values[k] > values[k - 1]);
  CHECK(values[0] == doctest::Approx(2 * 0.05 * 10));
}

TEST_CASE("every method produces a region on a small sample") {
  auto cfg = default_config("region", true);
  cfg.grid.m = 128;
  double y_true = 0;
  const auto s = testing::friedman_setup(30, 0.2, LossSpec::logcosh(), 31, &y_true);
  for (const auto& m : known_methods()) {
    CAPTURE(m);
    const auto out = run_method(m, s, y_true, cfg, 5);
    CHECK(out.method == m);
    CHECK_FALSE(out.region.empty());
    CHECK(out.length > 0.0);
    CHECK(std::isfinite(out.length));
    if (out.lower) {
      CHECK(out.lower->subset_of(out.region));
      CHECK(out.lower_length <= out.length + 1e-9);
    }
  }
  CHECK_THROWS_AS(run_method("Nope", s, y_true, cfg, 5), InputError);
}

TEST_CASE("grid auto-expansion removes clipping") {
  auto cfg = default_config("region", true);
  cfg.grid.m = 64;
  cfg.grid.lo = 13.0;
  cfg.grid.hi = 14.0;
  double y_true = 0;
  const auto s = testing::friedman_setup(20, 0.5, LossSpec::logcosh(), 32, &y_true);
  const auto out = run_method("UStableCP", s, y_true, cfg, 1);
  CHECK(out.expansions > 0);
  CHECK_FALSE(out.clipped);
  cfg.grid.auto_expand = false;
  std::vector<std::string> seen;
  auto prev = set_warning_sink([&](std::string_view m) { seen.emplace_back(m); });
  const auto clipped = run_method("UStableCP", s, y_true, cfg, 1);
  set_warning_sink(prev);
  CHECK(clipped.clipped);
  CHECK(seen.size() == 1);
}

TEST_CASE("sweep on a tiny schedule") {
  auto cfg = default_config("sweep", true);
  cfg.n_values = {16, 24, 32, 48};
  cfg.grid.m = 128;
  const auto res = run_sweep(cfg);
  CHECK(res.rows.size() == 12);
  REQUIRE(res.summaries.size() == 3);
  for (const auto& s : res.summaries) {
    CHECK(s.failures == 0);
    CHECK(s.bound_dominates);
    CHECK(s.delta_fit.points == 4);
  }
  for (const auto& r : res.rows) CHECK(r.delta <= r.bound + sweep_bound_slack(r, cfg.grid));
  cfg.n_values = {16, 24};
  CHECK_THROWS_AS(run_sweep(cfg), InputError);
}

TEST_CASE("compare output is byte-identical across runs") {
  auto cfg = default_config("compare", true);
  cfg.n = 30;
  cfg.repetitions = 4;
  cfg.grid.m = 96;
  cfg.methods = {"OracleCP", "SplitCP", "CrossCP", "UStableCP", "InfluenceFunctionCP"};
  const auto d1 = temp_dir("cmp1");
  const auto d2 = temp_dir("cmp2");
  write_compare(d1, run_compare(cfg), cfg);
  write_compare(d2, run_compare(cfg), cfg);
  for (const char* f : {"compare.csv", "compare_summary.csv"}) {
    CAPTURE(f);
    const auto a = slurp(d1 + "/" + f);
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(d2 + "/" + f));
  }
  CHECK(std::filesystem::exists(d1 + "/compare_timing.csv"));
  const auto meta = json::parse(slurp(d1 + "/compare_meta.json"));
  CHECK(meta["schema_version"] == kSchemaVersion);
  CHECK(meta["config_hash"] == config_hash(cfg));
}

TEST_CASE("select-lambda on a small sample") {
  auto cfg = default_config("select-lambda", true);
  cfg.grid.m = 96;
  cfg.lambda_grid = {0.1, 1.0};
  const Dataset data = friedman1(21, 1.0, 3);
  const auto qs = split_query(data, 20);
  const auto res = run_select_lambda(cfg, qs.train, qs.x_query, qs.y_query);
  CHECK(res.measures.size() == 2);
  CHECK((res.chosen == 0.1 || res.chosen == 1.0));
  REQUIRE(res.final_region.has_value());
  CHECK(res.final_region->length > 0.0);
  cfg.lambda_grid.clear();
  CHECK_THROWS_AS(run_select_lambda(cfg, qs.train, qs.x_query, qs.y_query), InputError);
}

TEST_CASE("curve CSV and region JSON") {
  auto cfg = default_config("region", true);
  cfg.grid.m = 32;
  double y_true = 0;
  const auto s = testing::friedman_setup(12, 0.3, LossSpec::logcosh(), 40, &y_true);
  const auto out = run_method("InfluenceFunctionCP", s, y_true, cfg, 1);
  const auto dir = temp_dir("curve");
  write_curve_csv(dir + "/c.csv", out, cfg.alpha);
  std::ifstream f(dir + "/c.csv");
  std::string header;
  std::getline(f, header);
  CHECK(header.find("upper_p") != std::string::npos);
  CHECK(header.find("tau_test") != std::string::npos);
  Index lines = 0;
  for (std::string l; std::getline(f, l);) ++lines;
  CHECK(lines == out.curve.grid.size());
  const auto j = region_json(out, cfg.alpha);
  CHECK(j["method"] == "InfluenceFunctionCP");
  CHECK(j.contains("intervals"));
}
