#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "afcp/approx.hpp"
#include "afcp/conformal.hpp"
#include "afcp/data.hpp"

namespace afcp {

inline constexpr const char* kSchemaVersion = "1.0";

/// lambda = value, or lambda = c (n+1)^{-r}.
struct LambdaRule {
  std::optional<double> value;
  double r = 0.33;
  double c = 0.0;  ///< 0 means the default c = 0.5 * 129^r, i.e. lambda(n+1 = 129) = 0.5

  double constant() const;
  double at(Index n_plus_1) const;
};

struct GridConfig {
  Index m = 512;
  double pad = 0.5;
  std::optional<double> lo;
  std::optional<double> hi;
  /// Double the grid half-width (up to max_expansions times) while the
  /// region touches a grid end.
  bool auto_expand = true;
  int max_expansions = 10;
  /// Bisection tolerance of the refined measure, relative to hi - lo.
  double refine_rel_tol = 1e-10;
};

struct ExperimentConfig {
  KernelSpec kernel;
  LossSpec loss;
  std::vector<std::string> methods;
  double alpha = 0.1;
  GridConfig grid;
  LambdaRule lambda;
  std::vector<Index> n_values;
  Index n = 200;
  Index repetitions = 1;
  std::uint64_t seed = 0;
  double z = 0.0;
  double noise_sd = 0.0;
  double split_fraction = 0.5;
  Index folds = 5;
  std::vector<double> lambda_grid;
  double select_fraction = 0.5;
  std::string select_method = "InfluenceFunctionCP";
  std::string output_dir = "out";

  void validate() const;
};

/// Defaults for a subcommand ("sweep", "compare", "region", "select-lambda",
/// "gen-data"); `desk` selects the small preset.
ExperimentConfig default_config(const std::string& command, bool desk);
/// Overlays the keys present in `j` on `base`. Unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& j, ExperimentConfig base);
ExperimentConfig load_config(const std::string& path, ExperimentConfig base);
nlohmann::json to_json(const ExperimentConfig& cfg);
/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// `count` distinct integers log-spaced in [lo, hi].
std::vector<Index> log_spaced_counts(Index lo, Index hi, Index count);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  Index points = 0;
};

/// Least squares of log(y) on log(x); non-positive entries are skipped.
LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

/// Methods accepted by run_method.
const std::vector<std::string>& known_methods();

/// Region of one method for one query, on a grid grown until the region no
/// longer touches its ends.
struct MethodOutput {
  std::string method;
  PValueCurve curve;
  PredictionRegion region;                ///< {upper p-value > alpha}
  std::optional<PredictionRegion> lower;  ///< approximate methods only
  double length = 0.0;                    ///< measure with refined boundaries
  double lower_length = 0.0;
  bool clipped = false;
  int expansions = 0;
  double seconds = 0.0;
  std::shared_ptr<const ApproxContext> context;  ///< approximate methods only
};

MethodOutput run_method(const std::string& method, const ConformalSetup& setup, double y_true,
                        const ExperimentConfig& cfg, std::uint64_t seed);

/// Starting grid for a sample (explicit bounds or padded output range).
YGrid initial_grid(const GridConfig& grid, const Eigen::VectorXd& Y);

/// Thickness study for one approximation method over an n schedule.
struct SweepRow {
  std::string method;
  Index n = 0;
  Index rep = 0;
  double lambda = 0.0;
  double delta = 0.0;       ///< measure(upper) - measure(lower), refined
  double delta_grid = 0.0;  ///< thickness_gap on the grid
  double bound = 0.0;
  bool bound_refined = true;
  double tau2_sup = 0.0;
  double grid_lo = 0.0;
  double grid_hi = 0.0;
  bool ok = true;
  std::string error;
  double seconds = 0.0;
};

struct SweepSummary {
  std::string method;
  LineFit delta_fit;
  LineFit bound_fit;
  bool bound_dominates = true;
  Index failures = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summaries;
};

/// Slack allowed when checking bound >= delta: the refined measure resolves
/// each of the four region boundaries to within the bisection tolerance.
double sweep_bound_slack(const SweepRow& row, const GridConfig& grid);

SweepResult run_sweep(const ExperimentConfig& cfg);

struct CompareRow {
  Index rep = 0;
  std::string method;
  double length = 0.0;
  double length_grid = 0.0;
  bool covered = false;
  bool clipped = false;
  double seconds = 0.0;
};

struct CompareSummary {
  std::string method;
  double mean_length = 0.0;
  double sd_length = 0.0;
  double coverage = 0.0;
  double mean_seconds = 0.0;
  double relative_time = 0.0;  ///< mean seconds / OracleCP mean seconds
  Index reps = 0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::vector<CompareSummary> summaries;
};

/// Each repetition draws friedman1(n) and holds out its last row as query.
CompareResult run_compare(const ExperimentConfig& cfg);

/// argmin of measure over the grid; ties resolved towards the largest lambda.
double select_lambda(const std::vector<double>& lambdas, const std::function<double(double)>& measure,
                     std::vector<double>* measures = nullptr);

struct SelectLambdaResult {
  std::vector<double> lambdas;
  std::vector<double> measures;
  double chosen = 0.0;
  bool all_degenerate = false;
  std::optional<MethodOutput> final_region;
};

/// Splits `data` into D1 and D2; scores each lambda by the average
/// leave-one-out upper-region measure on D1 and builds the final region for
/// `x_query` on D2.
SelectLambdaResult run_select_lambda(const ExperimentConfig& cfg, const Dataset& data,
                                     const Eigen::VectorXd& x_query, double y_query);

// Writers. CSVs hold only deterministic columns; wall times go to *_timing.csv.
void write_curve_csv(const std::string& path, const MethodOutput& out, double alpha);
nlohmann::json region_json(const MethodOutput& out, double alpha);
void write_sweep(const std::string& dir, const SweepResult& res, const ExperimentConfig& cfg);
void write_compare(const std::string& dir, const CompareResult& res, const ExperimentConfig& cfg);
void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json run_metadata(const std::string& command, const ExperimentConfig& cfg);

}  // namespace afcp
