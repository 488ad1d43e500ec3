#include "afcp/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "afcp/diagnostics.hpp"

namespace afcp {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool is_approx(const std::string& method) {
  return method == "UStableCP" || method == "LocStableCP" || method == "InfluenceFunctionCP";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  return out;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) throw InputError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError("config: bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

double LambdaRule::constant() const { return c > 0.0 ? c : 0.5 * std::pow(129.0, r); }

double LambdaRule::at(Index n_plus_1) const {
  if (value) return *value;
  if (n_plus_1 < 1) throw InputError("lambda rule: n+1 must be positive");
  return constant() * std::pow(static_cast<double>(n_plus_1), -r);
}

void ExperimentConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("config: alpha must lie in (0, 1)");
  if (!(lambda.r >= 0.0 && lambda.r < 1.0)) throw InputError("config: lambda.r must lie in [0, 1)");
  if (lambda.c < 0.0) throw InputError("config: lambda.c must be positive");
  if (lambda.value && !(*lambda.value > 0.0)) throw InputError("config: lambda.value must be positive");
  if (repetitions < 1) throw InputError("config: repetitions must be >= 1");
  if (grid.m < 2) throw InputError("config: grid.m must be >= 2");
  if (grid.lo && grid.hi && !(*grid.lo < *grid.hi)) throw InputError("config: grid.lo must be below grid.hi");
  if (!(grid.refine_rel_tol > 0.0)) throw InputError("config: grid.refine_rel_tol must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw InputError("config: split_fraction must lie in (0, 1)");
  if (!(select_fraction > 0.0 && select_fraction < 1.0))
    throw InputError("config: select_fraction must lie in (0, 1)");
  if (folds < 2) throw InputError("config: folds must be >= 2");
  if (!(noise_sd >= 0.0)) throw InputError("config: noise_sd must be >= 0");
  if (!std::isfinite(z)) throw InputError("config: z must be finite");
  for (const auto& m : methods) {
    const auto& known = known_methods();
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw InputError("config: unknown method '" + m + "'");
  }
  for (double l : lambda_grid)
    if (!(l > 0.0)) throw InputError("config: lambda_grid entries must be positive");
  loss.validate();
}

ExperimentConfig default_config(const std::string& command, bool desk) {
  ExperimentConfig cfg;
  cfg.loss = LossSpec::logcosh(1.0);
  cfg.kernel = KernelSpec{KernelFamily::laplacian, std::nullopt};
  if (command == "sweep") {
    cfg.methods = {"UStableCP", "LocStableCP", "InfluenceFunctionCP"};
    cfg.n_values = desk ? log_spaced_counts(32, 256, 8) : log_spaced_counts(128, 1024, 15);
    cfg.output_dir = "out/sweep";
  } else if (command == "compare") {
    cfg.methods = {"SplitCP", "UStableCP", "LocStableCP", "InfluenceFunctionCP", "OracleCP"};
    cfg.n = 200;
    cfg.repetitions = desk ? 50 : 100;
    cfg.output_dir = "out/compare";
  } else if (command == "region") {
    cfg.methods = {"InfluenceFunctionCP"};
    cfg.n = desk ? 50 : 200;
    cfg.output_dir = "out/region";
  } else if (command == "select-lambda") {
    cfg.methods = {"InfluenceFunctionCP"};
    cfg.n = desk ? 60 : 200;
    cfg.lambda_grid = {0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
    cfg.output_dir = "out/select_lambda";
  } else if (command == "gen-data") {
    cfg.n = desk ? 50 : 200;
    cfg.output_dir = "out/data";
  } else {
    throw InputError("unknown command '" + command + "'");
  }
  return cfg;
}

ExperimentConfig parse_config(const json& j, ExperimentConfig cfg) {
  check_keys(j,
             {"kernel", "loss", "methods", "alpha", "grid", "lambda", "n_schedule", "n_values", "n", "repetitions",
              "seed", "z", "noise_sd", "split_fraction", "folds", "lambda_grid", "select_fraction", "select_method",
              "output_dir"},
             "config");
  if (j.contains("kernel")) {
    const auto& k = j["kernel"];
    check_keys(k, {"family", "bandwidth"}, "kernel");
    if (k.contains("family")) cfg.kernel.family = kernel_family_from_string(get_as<std::string>(k, "family"));
    if (k.contains("bandwidth")) {
      const auto& b = k["bandwidth"];
      if (b.is_null() || (b.is_string() && b.get<std::string>() == "auto"))
        cfg.kernel.bandwidth.reset();
      else if (b.is_number())
        cfg.kernel.bandwidth = b.get<double>();
      else
        throw InputError("config: kernel.bandwidth must be a number or \"auto\"");
    }
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    check_keys(l, {"family", "a", "t"}, "loss");
    if (l.contains("family")) cfg.loss.family = loss_family_from_string(get_as<std::string>(l, "family"));
    if (l.contains("a")) cfg.loss.a = get_as<double>(l, "a");
    if (l.contains("t")) cfg.loss.t = get_as<double>(l, "t");
  }
  if (j.contains("methods")) cfg.methods = get_as<std::vector<std::string>>(j, "methods");
  if (j.contains("alpha")) cfg.alpha = get_as<double>(j, "alpha");
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    check_keys(g, {"m", "pad", "lo", "hi", "auto_expand", "max_expansions", "refine_rel_tol"}, "grid");
    if (g.contains("m")) cfg.grid.m = get_as<Index>(g, "m");
    if (g.contains("pad")) cfg.grid.pad = get_as<double>(g, "pad");
    if (g.contains("lo")) {
      if (g["lo"].is_null())
        cfg.grid.lo.reset();
      else
        cfg.grid.lo = get_as<double>(g, "lo");
    }
    if (g.contains("hi")) {
      if (g["hi"].is_null())
        cfg.grid.hi.reset();
      else
        cfg.grid.hi = get_as<double>(g, "hi");
    }
    if (g.contains("auto_expand")) cfg.grid.auto_expand = get_as<bool>(g, "auto_expand");
    if (g.contains("max_expansions")) cfg.grid.max_expansions = get_as<int>(g, "max_expansions");
    if (g.contains("refine_rel_tol")) cfg.grid.refine_rel_tol = get_as<double>(g, "refine_rel_tol");
  }
  if (j.contains("lambda")) {
    const auto& l = j["lambda"];
    if (l.is_number()) {
      cfg.lambda.value = l.get<double>();
    } else {
      check_keys(l, {"value", "c", "r"}, "lambda");
      if (l.contains("value")) {
        if (l["value"].is_null())
          cfg.lambda.value.reset();
        else
          cfg.lambda.value = get_as<double>(l, "value");
      }
      if (l.contains("c")) cfg.lambda.c = get_as<double>(l, "c");
      if (l.contains("r")) cfg.lambda.r = get_as<double>(l, "r");
    }
  }
  if (j.contains("n_schedule")) {
    const auto& s = j["n_schedule"];
    check_keys(s, {"min", "max", "count"}, "n_schedule");
    cfg.n_values = log_spaced_counts(get_as<Index>(s, "min"), get_as<Index>(s, "max"), get_as<Index>(s, "count"));
  }
  if (j.contains("n_values")) cfg.n_values = get_as<std::vector<Index>>(j, "n_values");
  if (j.contains("n")) cfg.n = get_as<Index>(j, "n");
  if (j.contains("repetitions")) cfg.repetitions = get_as<Index>(j, "repetitions");
  if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("z")) cfg.z = get_as<double>(j, "z");
  if (j.contains("noise_sd")) cfg.noise_sd = get_as<double>(j, "noise_sd");
  if (j.contains("split_fraction")) cfg.split_fraction = get_as<double>(j, "split_fraction");
  if (j.contains("folds")) cfg.folds = get_as<Index>(j, "folds");
  if (j.contains("lambda_grid")) cfg.lambda_grid = get_as<std::vector<double>>(j, "lambda_grid");
  if (j.contains("select_fraction")) cfg.select_fraction = get_as<double>(j, "select_fraction");
  if (j.contains("select_method")) cfg.select_method = get_as<std::string>(j, "select_method");
  if (j.contains("output_dir")) cfg.output_dir = get_as<std::string>(j, "output_dir");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j, std::move(base));
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["kernel"] = {{"family", to_string(cfg.kernel.family)},
                 {"bandwidth", cfg.kernel.bandwidth ? json(*cfg.kernel.bandwidth) : json("auto")}};
  j["loss"] = {{"family", to_string(cfg.loss.family)}, {"a", cfg.loss.a}, {"t", cfg.loss.t}};
  j["methods"] = cfg.methods;
  j["alpha"] = cfg.alpha;
  j["grid"] = {{"m", cfg.grid.m},
               {"pad", cfg.grid.pad},
               {"lo", cfg.grid.lo ? json(*cfg.grid.lo) : json(nullptr)},
               {"hi", cfg.grid.hi ? json(*cfg.grid.hi) : json(nullptr)},
               {"auto_expand", cfg.grid.auto_expand},
               {"max_expansions", cfg.grid.max_expansions},
               {"refine_rel_tol", cfg.grid.refine_rel_tol}};
  if (cfg.lambda.value)
    j["lambda"] = {{"value", *cfg.lambda.value}};
  else
    j["lambda"] = {{"c", cfg.lambda.constant()}, {"r", cfg.lambda.r}};
  j["n_values"] = cfg.n_values;
  j["n"] = cfg.n;
  j["repetitions"] = cfg.repetitions;
  j["seed"] = cfg.seed;
  j["z"] = cfg.z;
  j["noise_sd"] = cfg.noise_sd;
  j["split_fraction"] = cfg.split_fraction;
  j["folds"] = cfg.folds;
  j["lambda_grid"] = cfg.lambda_grid;
  j["select_fraction"] = cfg.select_fraction;
  j["select_method"] = cfg.select_method;
  j["output_dir"] = cfg.output_dir;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Index> log_spaced_counts(Index lo, Index hi, Index count) {
  if (lo < 1 || hi < lo) throw InputError("n schedule: need 1 <= min <= max");
  if (count < 1) throw InputError("n schedule: count must be >= 1");
  std::vector<Index> out;
  if (count == 1) return {lo};
  const double a = std::log(static_cast<double>(lo));
  const double b = std::log(static_cast<double>(hi));
  for (Index k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(count - 1);
    const auto v = static_cast<Index>(std::llround(std::exp(a + t * (b - a))));
    if (out.empty() || v > out.back()) out.push_back(v);
  }
  return out;
}

LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InputError("loglog_fit: length mismatch");
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] > 0.0 && y[k] > 0.0 && std::isfinite(x[k]) && std::isfinite(y[k])) {
      lx.push_back(std::log(x[k]));
      ly.push_back(std::log(y[k]));
    }
  }
  LineFit fit;
  fit.points = static_cast<Index>(lx.size());
  if (lx.size() < 2) {
    fit.slope = fit.intercept = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names = {"UStableCP", "LocStableCP", "InfluenceFunctionCP", "OracleCP",
                                                 "SplitCP",   "CrossCP",     "FullCP"};
  return names;
}

// ---------------------------------------------------------------------------
// One region

YGrid initial_grid(const GridConfig& g, const Eigen::VectorXd& Y) {
  const YGrid auto_grid = YGrid::around(Y, g.pad, g.m);
  return YGrid(g.lo.value_or(auto_grid.lo()), g.hi.value_or(auto_grid.hi()), g.m);
}

MethodOutput run_method(const std::string& method, const ConformalSetup& setup, double y_true,
                        const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const double alpha = cfg.alpha;

  std::function<PValueCurve(const YGrid&)> curve_fn;
  std::function<bool(double)> in_upper;
  std::function<bool(double)> in_lower;
  std::optional<PooledScores> pooled;
  std::shared_ptr<const ApproxContext> ctx;

  if (is_approx(method)) {
    ctx = std::make_shared<const ApproxContext>(setup, ApproxMethod{approx_kind_from_string(method), cfg.z});
    curve_fn = [ctx](const YGrid& g) { return approx_pvalue_curves(*ctx, g); };
    in_upper = [ctx, alpha](double y) { return ctx->evaluate(y).upper_p > alpha; };
    in_lower = [ctx, alpha](double y) { return ctx->evaluate(y).lower_p > alpha; };
  } else if (method == "OracleCP") {
    pooled = oracle_scores(setup, y_true);
  } else if (method == "SplitCP") {
    pooled = split_scores(setup, cfg.split_fraction, seed);
  } else if (method == "CrossCP") {
    pooled = cross_scores(setup, cfg.folds, seed);
  } else if (method == "FullCP") {
    curve_fn = [&setup](const YGrid& g) { return full_pvalue_curve_bruteforce(setup, g); };
    in_upper = [&setup, alpha](double y) { return full_pvalue_at(setup, y) > alpha; };
  } else {
    throw InputError("unknown method '" + method + "'");
  }
  if (pooled) {
    curve_fn = [p = *pooled](const YGrid& g) { return p.curve(g); };
  }

  YGrid grid = initial_grid(cfg.grid, setup.data.Y);
  PValueCurve curve = curve_fn(grid);
  PredictionRegion region = PredictionRegion::from_pvalues(grid, curve.upper, alpha);
  int expansions = 0;
  while (cfg.grid.auto_expand && region.touches_boundary() && expansions < cfg.grid.max_expansions) {
    const double center = 0.5 * (grid.lo() + grid.hi());
    const double half = grid.hi() - grid.lo();
    grid = YGrid(center - half, center + half, grid.size());
    curve = curve_fn(grid);
    region = PredictionRegion::from_pvalues(grid, curve.upper, alpha);
    ++expansions;
  }

  MethodOutput out{method, curve, region, std::nullopt, 0.0, 0.0, region.touches_boundary(), expansions, 0.0, ctx};
  if (out.clipped) {
    std::ostringstream msg;
    msg << method << ": region touches the y-grid boundary [" << grid.lo() << ", " << grid.hi()
        << "]; its measure is clipped";
    warn(msg.str());
  }

  const double tol = cfg.grid.refine_rel_tol * (grid.hi() - grid.lo());
  if (pooled) {
    const double exact = pooled->exact_measure(alpha);
    out.length = std::isfinite(exact) ? exact : region.measure();
  } else {
    out.length = refined_measure(region, in_upper, tol);
  }
  if (ctx) {
    out.lower = PredictionRegion::from_pvalues(grid, curve.lower, alpha);
    out.lower_length = refined_measure(*out.lower, in_lower, tol);
  } else {
    out.lower_length = out.length;
  }
  out.seconds = seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

double sweep_bound_slack(const SweepRow& row, const GridConfig& grid) {
  return 4.0 * grid.refine_rel_tol * (row.grid_hi - row.grid_lo) + 1e-12 * std::abs(row.bound);
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.n_values.size() < 4) throw InputError("sweep: the n schedule needs at least 4 points");
  std::vector<std::string> methods;
  for (const auto& m : cfg.methods)
    if (is_approx(m)) methods.push_back(m);
  if (methods.empty()) throw InputError("sweep: no approximation method selected");

  struct Task {
    std::string method;
    Index n;
    Index rep;
  };
  std::vector<Task> tasks;
  for (const auto& m : methods)
    for (Index n : cfg.n_values)
      for (Index r = 0; r < cfg.repetitions; ++r) tasks.push_back({m, n, r});

  SweepResult res;
  res.rows.resize(tasks.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Task& task = tasks[t];
    SweepRow row;
    row.method = task.method;
    row.n = task.n;
    row.rep = task.rep;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const std::uint64_t s = derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(task.n)),
                                          static_cast<std::uint64_t>(task.rep));
      const QuerySplit qs = split_query(friedman1(task.n + 1, cfg.noise_sd, s), task.n);
      row.lambda = cfg.lambda.at(task.n + 1);
      ConformalSetup setup{qs.train, qs.x_query, row.lambda, cfg.loss, cfg.kernel, {}};
      const MethodOutput out = run_method(task.method, setup, qs.y_query, cfg, derive_seed(s, 1));
      row.delta = out.length - out.lower_length;
      row.delta_grid = thickness_gap(out.region, *out.lower);
      row.grid_lo = out.region.grid().lo();
      row.grid_hi = out.region.grid().hi();
      const auto kind = approx_kind_from_string(task.method);
      if (kind == ApproxKind::influence_function) row.tau2_sup = out.curve.extras.at("tau_max").maxCoeff();
      const ThicknessBound b =
          thickness_bound(kind, out.context->gram(), out.context->constants(), row.lambda, row.tau2_sup);
      row.bound = b.value;
      row.bound_refined = b.refined;
      if (out.clipped) {
        row.ok = false;
        row.error = "region clipped by the y-grid";
      }
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    row.seconds = seconds_since(t0);
    res.rows[t] = row;
  }

  for (const auto& m : methods) {
    SweepSummary s;
    s.method = m;
    std::vector<double> ns, deltas, bounds;
    for (const auto& row : res.rows) {
      if (row.method != m) continue;
      if (!row.ok) {
        ++s.failures;
        continue;
      }
      ns.push_back(static_cast<double>(row.n));
      deltas.push_back(row.delta);
      bounds.push_back(row.bound);
      if (row.bound + sweep_bound_slack(row, cfg.grid) < row.delta) s.bound_dominates = false;
    }
    s.delta_fit = loglog_fit(ns, deltas);
    s.bound_fit = loglog_fit(ns, bounds);
    res.summaries.push_back(s);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Compare

CompareResult run_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.n < 3) throw InputError("compare: n must be >= 3");
  const auto reps = cfg.repetitions;
  const auto& methods = cfg.methods;
  const std::size_t per_rep = methods.size();
  CompareResult res;
  res.rows.resize(static_cast<std::size_t>(reps) * per_rep);
  std::exception_ptr failure;
  std::mutex failure_mutex;

#pragma omp parallel for schedule(dynamic)
  for (Index r = 0; r < reps; ++r) {
    try {
      const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
      const QuerySplit qs = split_query(friedman1(cfg.n, cfg.noise_sd, s), cfg.n - 1);
      ConformalSetup setup{qs.train, qs.x_query, cfg.lambda.at(qs.train.n() + 1), cfg.loss, cfg.kernel, {}};
      for (std::size_t k = 0; k < per_rep; ++k) {
        const MethodOutput out = run_method(methods[k], setup, qs.y_query, cfg, derive_seed(s, 1));
        CompareRow row;
        row.rep = r;
        row.method = methods[k];
        row.length = out.length;
        row.length_grid = out.region.measure();
        row.covered = out.region.contains(qs.y_query);
        row.clipped = out.clipped;
        row.seconds = out.seconds;
        res.rows[static_cast<std::size_t>(r) * per_rep + k] = row;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  double oracle_time = std::numeric_limits<double>::quiet_NaN();
  for (const auto& m : methods) {
    CompareSummary s;
    s.method = m;
    std::vector<double> lengths;
    double covered = 0.0, secs = 0.0;
    for (const auto& row : res.rows) {
      if (row.method != m) continue;
      lengths.push_back(row.length);
      covered += row.covered ? 1.0 : 0.0;
      secs += row.seconds;
    }
    s.reps = static_cast<Index>(lengths.size());
    const double k = static_cast<double>(lengths.size());
    s.mean_length = std::accumulate(lengths.begin(), lengths.end(), 0.0) / k;
    double ss = 0.0;
    for (double l : lengths) ss += (l - s.mean_length) * (l - s.mean_length);
    s.sd_length = lengths.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
    s.coverage = covered / k;
    s.mean_seconds = secs / k;
    if (m == "OracleCP") oracle_time = s.mean_seconds;
    res.summaries.push_back(s);
  }
  for (auto& s : res.summaries) s.relative_time = s.mean_seconds / oracle_time;
  return res;
}

// ---------------------------------------------------------------------------
// Lambda selection

double select_lambda(const std::vector<double>& lambdas, const std::function<double(double)>& measure,
                     std::vector<double>* measures) {
  if (lambdas.empty()) throw InputError("select_lambda: empty lambda grid");
  std::vector<double> values;
  for (double l : lambdas) values.push_back(measure(l));
  double best = std::numeric_limits<double>::infinity();
  for (double v : values) best = std::min(best, v);
  double chosen = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const bool tie = values[k] == best || std::abs(values[k] - best) <= 1e-12 * std::max(1.0, std::abs(best));
    if (tie) chosen = std::max(chosen, lambdas[k]);
  }
  if (measures) *measures = std::move(values);
  return chosen;
}

SelectLambdaResult run_select_lambda(const ExperimentConfig& cfg, const Dataset& data,
                                     const Eigen::VectorXd& x_query, double y_query) {
  cfg.validate();
  data.validate();
  if (cfg.lambda_grid.empty()) throw InputError("select-lambda: lambda_grid is empty");
  const Index n = data.n();
  const auto n1 = static_cast<Index>(std::llround(cfg.select_fraction * static_cast<double>(n)));
  if (n1 < 3 || n - n1 < 2) throw InputError("select-lambda: data too small to split into D1 and D2");

  Rng rng(derive_seed(cfg.seed, 0));
  const auto perm = rng.permutation(n);
  std::vector<Index> rows1(perm.begin(), perm.begin() + n1);
  std::vector<Index> rows2(perm.begin() + n1, perm.end());
  std::sort(rows1.begin(), rows1.end());
  std::sort(rows2.begin(), rows2.end());
  const Dataset d1 = subset(data, rows1);
  const Dataset d2 = subset(data, rows2);

  SelectLambdaResult res;
  res.lambdas = cfg.lambda_grid;
  std::vector<int> all_clipped(cfg.lambda_grid.size(), 1);
  std::size_t lambda_index = 0;

  auto loo_measure = [&](double lambda) {
    std::vector<double> lengths(static_cast<std::size_t>(n1));
    std::vector<char> clipped(static_cast<std::size_t>(n1), 0);
    std::exception_ptr failure;
    std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
    for (Index i = 0; i < n1; ++i) {
      try {
        const QuerySplit qs = split_query(d1, i);
        ConformalSetup setup{qs.train, qs.x_query, lambda, cfg.loss, cfg.kernel, {}};
        const MethodOutput out =
            run_method(cfg.select_method, setup, qs.y_query, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(i) + 1));
        lengths[static_cast<std::size_t>(i)] = out.length;
        clipped[static_cast<std::size_t>(i)] = out.clipped ? 1 : 0;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    all_clipped[lambda_index] = std::all_of(clipped.begin(), clipped.end(), [](char c) { return c != 0; });
    ++lambda_index;
    return std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(n1);
  };

  res.chosen = select_lambda(cfg.lambda_grid, loo_measure, &res.measures);
  res.all_degenerate = std::all_of(all_clipped.begin(), all_clipped.end(), [](int c) { return c != 0; });
  if (res.all_degenerate)
    warn("select-lambda: every candidate lambda produced regions filling the y-grid; using the tie rule");

  ConformalSetup final_setup{d2, x_query, res.chosen, cfg.loss, cfg.kernel, {}};
  res.final_region = run_method(cfg.select_method, final_setup, y_query, cfg, derive_seed(cfg.seed, 0xd2));
  return res;
}

// ---------------------------------------------------------------------------
// Writers

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json run_metadata(const std::string& command, const ExperimentConfig& cfg) {
  return {{"command", command},
          {"schema_version", kSchemaVersion},
          {"config_hash", config_hash(cfg)},
          {"config", to_json(cfg)},
          {"rng", Rng::algorithm()},
          {"seed_derivation", "splitmix64(master, index)"},
          {"lambda_constant", cfg.lambda.value ? json(nullptr) : json(cfg.lambda.constant())}};
}

void write_curve_csv(const std::string& path, const MethodOutput& out, double alpha) {
  auto f = open_out(path);
  const auto& c = out.curve;
  const std::vector<std::string> extra_cols = {"tau_test", "rho1", "rho2"};
  f << "y,upper_p,lower_p,in_region";
  std::vector<const Eigen::VectorXd*> extras;
  for (const auto& name : extra_cols) {
    auto it = c.extras.find(name);
    if (it != c.extras.end()) {
      f << ',' << name;
      extras.push_back(&it->second);
    }
  }
  f << '\n';
  for (Index j = 0; j < c.grid.size(); ++j) {
    f << num(c.grid.at(j)) << ',' << num(c.upper(j)) << ',' << num(c.lower(j)) << ','
      << (c.upper(j) > alpha ? 1 : 0);
    for (const auto* e : extras) f << ',' << num((*e)(j));
    f << '\n';
  }
}

json region_json(const MethodOutput& out, double alpha) {
  auto intervals_of = [](const PredictionRegion& r) {
    json arr = json::array();
    for (const auto& iv : r.intervals()) arr.push_back({iv.lo, iv.hi});
    return arr;
  };
  json j;
  j["method"] = out.method;
  j["alpha"] = alpha;
  j["intervals"] = intervals_of(out.region);
  j["measure"] = out.region.measure();
  j["refined_measure"] = out.length;
  j["clipped"] = out.clipped;
  j["grid"] = {{"lo", out.region.grid().lo()}, {"hi", out.region.grid().hi()}, {"m", out.region.grid().size()}};
  if (out.lower) {
    j["lower_intervals"] = intervals_of(*out.lower);
    j["lower_measure"] = out.lower->measure();
    j["lower_refined_measure"] = out.lower_length;
  }
  return j;
}

void write_sweep(const std::string& dir, const SweepResult& res, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  {
    auto f = open_out(dir + "/sweep.csv");
    f << "method,n,rep,lambda,delta,delta_grid,bound,bound_refined,tau2_sup,grid_lo,grid_hi,status\n";
    for (const auto& r : res.rows) {
      f << r.method << ',' << r.n << ',' << r.rep << ',' << num(r.lambda) << ',' << num(r.delta) << ','
        << num(r.delta_grid) << ',' << num(r.bound) << ',' << (r.bound_refined ? 1 : 0) << ',' << num(r.tau2_sup)
        << ',' << num(r.grid_lo) << ',' << num(r.grid_hi) << ',' << (r.ok ? "ok" : "failed: " + r.error) << '\n';
    }
  }
  {
    auto f = open_out(dir + "/sweep_slopes.csv");
    f << "method,quantity,slope,intercept,points,bound_dominates,failures\n";
    for (const auto& s : res.summaries) {
      f << s.method << ",delta," << num(s.delta_fit.slope) << ',' << num(s.delta_fit.intercept) << ','
        << s.delta_fit.points << ',' << (s.bound_dominates ? 1 : 0) << ',' << s.failures << '\n';
      f << s.method << ",bound," << num(s.bound_fit.slope) << ',' << num(s.bound_fit.intercept) << ','
        << s.bound_fit.points << ',' << (s.bound_dominates ? 1 : 0) << ',' << s.failures << '\n';
    }
  }
  {
    auto f = open_out(dir + "/sweep_timing.csv");
    f << "method,n,rep,seconds\n";
    for (const auto& r : res.rows) f << r.method << ',' << r.n << ',' << r.rep << ',' << num(r.seconds) << '\n';
  }
  auto meta = run_metadata("sweep", cfg);
  // explicit constants 8 and 12/(1 - beta) instead of the O(.) statement
  meta["thickness_bound_form"] = "explicit_constants";
  write_json(dir + "/sweep_meta.json", meta);
}

void write_compare(const std::string& dir, const CompareResult& res, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  {
    auto f = open_out(dir + "/compare.csv");
    f << "rep,method,length,length_grid,covered,clipped\n";
    for (const auto& r : res.rows)
      f << r.rep << ',' << r.method << ',' << num(r.length) << ',' << num(r.length_grid) << ','
        << (r.covered ? 1 : 0) << ',' << (r.clipped ? 1 : 0) << '\n';
  }
  {
    auto f = open_out(dir + "/compare_summary.csv");
    f << "method,reps,mean_length,sd_length,coverage\n";
    for (const auto& s : res.summaries)
      f << s.method << ',' << s.reps << ',' << num(s.mean_length) << ',' << num(s.sd_length) << ','
        << num(s.coverage) << '\n';
  }
  {
    auto f = open_out(dir + "/compare_timing.csv");
    f << "method,mean_seconds,relative_time\n";
    for (const auto& s : res.summaries)
      f << s.method << ',' << num(s.mean_seconds) << ',' << num(s.relative_time) << '\n';
  }
  write_json(dir + "/compare_meta.json", run_metadata("compare", cfg));
}

}  // namespace afcp
