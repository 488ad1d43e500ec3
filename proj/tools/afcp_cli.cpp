// afcp: approximate full conformal prediction experiments.
//
//   afcp sweep         thickness of the approximate regions along an n schedule
//   afcp compare       region length / coverage / time of several methods
//   afcp region        region files for one query
//   afcp select-lambda choose lambda by leave-one-out region measure
//   afcp gen-data      friedman1 sample as CSV

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "afcp/diagnostics.hpp"
#include "afcp/experiments.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool desk = false;
  std::string data_path;
  long long query_row = -1;
};

void add_common(CLI::App* sub, CommonOptions& opt, bool with_data) {
  sub->add_option("--config", opt.config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
  sub->add_option("--out", opt.out_dir, "output directory (overrides the config)");
  sub->add_flag("--desk", opt.desk, "small preset for quick runs");
  if (with_data) {
    sub->add_option("--data", opt.data_path, "CSV with feature columns followed by the target column")
        ->check(CLI::ExistingFile);
    sub->add_option("--query-row", opt.query_row, "row used as the query (negative counts from the end)");
  }
}

afcp::ExperimentConfig resolve_config(const std::string& command, const CommonOptions& opt) {
  auto cfg = afcp::default_config(command, opt.desk);
  if (!opt.config_path.empty()) cfg = afcp::load_config(opt.config_path, cfg);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
  cfg.validate();
  return cfg;
}

afcp::Dataset input_data(const afcp::ExperimentConfig& cfg, const CommonOptions& opt) {
  if (!opt.data_path.empty()) return afcp::load_csv(opt.data_path);
  return afcp::friedman1(cfg.n, cfg.noise_sd, cfg.seed);
}

afcp::QuerySplit query_split(const afcp::Dataset& data, long long row) {
  const auto n = static_cast<long long>(data.n());
  const long long r = row < 0 ? n + row : row;
  if (r < 0 || r >= n) throw afcp::InputError("--query-row " + std::to_string(row) + " is out of range");
  return afcp::split_query(data, static_cast<afcp::Index>(r));
}

void write_region_files(const std::string& dir, const afcp::MethodOutput& out, const afcp::ExperimentConfig& cfg,
                        const std::string& command, const afcp::QuerySplit& qs) {
  afcp::write_curve_csv(dir + "/region_" + out.method + ".csv", out, cfg.alpha);
  auto j = afcp::region_json(out, cfg.alpha);
  j["metadata"] = afcp::run_metadata(command, cfg);
  j["y_query"] = qs.y_query;
  j["covers_y_query"] = out.region.contains(qs.y_query);
  afcp::write_json(dir + "/region_" + out.method + ".json", j);
  std::printf("%-20s measure %.6g (grid %.6g)  intervals %zu%s\n", out.method.c_str(), out.length,
              out.region.measure(), out.region.intervals().size(), out.clipped ? "  [clipped]" : "");
}

int cmd_sweep(const CommonOptions& opt) {
  const auto cfg = resolve_config("sweep", opt);
  const auto res = afcp::run_sweep(cfg);
  afcp::write_sweep(cfg.output_dir, res, cfg);
  for (const auto& s : res.summaries) {
    std::printf("%-20s slope(delta) %+.3f  slope(bound) %+.3f  bound>=delta %s  failures %lld\n", s.method.c_str(),
                s.delta_fit.slope, s.bound_fit.slope, s.bound_dominates ? "yes" : "NO",
                static_cast<long long>(s.failures));
  }
  std::printf("wrote %s/sweep.csv\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_compare(const CommonOptions& opt) {
  const auto cfg = resolve_config("compare", opt);
  const auto res = afcp::run_compare(cfg);
  afcp::write_compare(cfg.output_dir, res, cfg);
  for (const auto& s : res.summaries) {
    std::printf("%-20s mean length %9.4f  sd %8.4f  coverage %.3f  relative time %.3f\n", s.method.c_str(),
                s.mean_length, s.sd_length, s.coverage, s.relative_time);
  }
  std::printf("wrote %s/compare.csv\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_region(const CommonOptions& opt) {
  const auto cfg = resolve_config("region", opt);
  const auto qs = query_split(input_data(cfg, opt), opt.query_row);
  std::filesystem::create_directories(cfg.output_dir);
  afcp::ConformalSetup setup{qs.train, qs.x_query, cfg.lambda.at(qs.train.n() + 1), cfg.loss, cfg.kernel, {}};
  for (const auto& method : cfg.methods) {
    const auto out = afcp::run_method(method, setup, qs.y_query, cfg, afcp::derive_seed(cfg.seed, 1));
    write_region_files(cfg.output_dir, out, cfg, "region", qs);
  }
  return 0;
}

int cmd_select_lambda(const CommonOptions& opt) {
  const auto cfg = resolve_config("select-lambda", opt);
  const auto qs = query_split(input_data(cfg, opt), opt.query_row);
  std::filesystem::create_directories(cfg.output_dir);
  const auto res = afcp::run_select_lambda(cfg, qs.train, qs.x_query, qs.y_query);
  {
    std::ofstream f(cfg.output_dir + "/select_lambda.csv");
    if (!f) throw afcp::InputError("cannot write " + cfg.output_dir + "/select_lambda.csv");
    f << "lambda,mean_loo_measure,chosen\n";
    for (std::size_t k = 0; k < res.lambdas.size(); ++k) {
      char line[128];
      std::snprintf(line, sizeof line, "%.12g,%.12g,%d\n", res.lambdas[k], res.measures[k],
                    res.lambdas[k] == res.chosen ? 1 : 0);
      f << line;
    }
  }
  std::printf("chosen lambda %.6g%s\n", res.chosen, res.all_degenerate ? " (all candidates degenerate)" : "");
  write_region_files(cfg.output_dir, *res.final_region, cfg, "select-lambda", qs);
  return 0;
}

int cmd_gen_data(const CommonOptions& opt) {
  const auto cfg = resolve_config("gen-data", opt);
  std::filesystem::create_directories(cfg.output_dir);
  const auto data = afcp::friedman1(cfg.n, cfg.noise_sd, cfg.seed);
  const std::string path = cfg.output_dir + "/data.csv";
  afcp::save_csv(path, data);
  auto meta = afcp::run_metadata("gen-data", cfg);
  meta["generator"] = data.meta.generator;
  afcp::write_json(cfg.output_dir + "/data_meta.json", meta);
  std::printf("wrote %s (%lld rows)\n", path.c_str(), static_cast<long long>(data.n()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Approximate full conformal prediction for kernel regression"};
  app.require_subcommand(1);

  CommonOptions sweep_opt, compare_opt, region_opt, select_opt, gen_opt;
  auto* sweep = app.add_subcommand("sweep", "thickness of approximate regions along an n schedule");
  add_common(sweep, sweep_opt, false);
  auto* compare = app.add_subcommand("compare", "length, coverage and time of several methods");
  add_common(compare, compare_opt, false);
  auto* region = app.add_subcommand("region", "prediction region files for one query");
  add_common(region, region_opt, true);
  auto* select = app.add_subcommand("select-lambda", "choose lambda by leave-one-out region measure");
  add_common(select, select_opt, true);
  auto* gen = app.add_subcommand("gen-data", "write a friedman1 sample as CSV");
  add_common(gen, gen_opt, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sweep) return cmd_sweep(sweep_opt);
    if (*compare) return cmd_compare(compare_opt);
    if (*region) return cmd_region(region_opt);
    if (*select) return cmd_select_lambda(select_opt);
    if (*gen) return cmd_gen_data(gen_opt);
  } catch (const afcp::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
