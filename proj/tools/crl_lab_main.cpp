// crl-lab: command-line front end for the verification suites, the continual
// training loop, and the benchmark harness.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crl/harness.hpp"

namespace fs = std::filesystem;
using namespace crl;

namespace {

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
}

int cmd_verify(const std::string& suites_csv, int instances, std::uint64_t seed,
               const std::string& support, const std::string& out_path) {
  SuiteConfig cfg;
  cfg.instances = instances;
  cfg.seed = seed;
  if (support == "pairs")
    cfg.support = SupportMode::kPairs;
  else if (support == "states")
    cfg.support = SupportMode::kStates;
  else
    throw std::invalid_argument("unknown support mode: " + support);

  std::vector<BoundReport> all;
  for (const std::string& suite : split_commas(suites_csv)) {
    std::vector<BoundReport> part;
    if (suite == "bounds")
      part = run_bounds_suite(cfg);
    else if (suite == "pdl")
      part = run_pdl_suite(cfg);
    else if (suite == "corollaries")
      part = run_corollary_suite(cfg);
    else if (suite == "grad")
      part = run_grad_suite(cfg);
    else
      throw std::invalid_argument("unknown suite: " + suite);
    int failures = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    for (const BoundReport& r : part) {
      if (!r.holds) ++failures;
      min_slack = std::min(min_slack, r.slack);
    }
    std::printf("%-12s %5zu reports, %d failures, min slack % .3e\n", suite.c_str(),
                part.size(), failures, part.empty() ? 0.0 : min_slack);
    all.insert(all.end(), part.begin(), part.end());
  }

  write_text(out_path, bounds_report_json(all, cfg.instances));
  int failures = 0;
  for (const BoundReport& r : all)
    if (!r.holds) ++failures;
  std::printf("total        %5zu reports, %d failures -> %s\n", all.size(), failures,
              out_path.c_str());
  return failures == 0 ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& method_name_arg,
              std::uint64_t seed, const std::string& out_dir) {
  BenchmarkConfig cfg = load_config(config_path);
  Method method = parse_method(method_name_arg);
  BenchCell cell = run_cell(cfg, method, seed);
  write_cell_artifacts(out_dir, cell);
  std::printf("%s seed %llu: far %.4f", method_name(method).c_str(),
              static_cast<unsigned long long>(seed), cell.metrics.far);
  if (cell.metrics.bwt)
    std::printf(", bwt % .4f, forgetting %.4f, ft % .4f", *cell.metrics.bwt,
                *cell.metrics.forgetting, *cell.metrics.ft);
  std::printf(" -> %s\n", out_dir.c_str());
  return 0;
}

int cmd_bench(const std::string& config_path, const std::string& out_dir) {
  BenchmarkConfig cfg = load_config(config_path);
  BenchResult result = run_benchmark_to(out_dir, cfg);
  std::printf("%zu cells (%zu methods x %zu seeds), config hash %s\n",
              result.cells.size(), cfg.methods.size(), cfg.seeds.size(),
              cfg.config_hash.c_str());
  for (const MethodSummary& row : result.summary)
    std::printf("  %-10s far %.4f +- %.4f | bwt % .4f | forgetting %.4f | ft % .4f\n",
                method_name(row.method).c_str(), row.far_mean, row.far_std,
                row.bwt_mean, row.forgetting_mean, row.ft_mean);
  std::printf("artifacts -> %s\n", out_dir.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& param,
               const std::string& values_csv, const std::string& out_path) {
  BenchmarkConfig cfg = load_config(config_path);
  std::vector<double> values;
  for (const std::string& item : split_commas(values_csv)) {
    std::size_t used = 0;
    double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad value: " + item);
    values.push_back(v);
  }
  std::vector<AblationRow> rows = ablation_sweep(cfg, param, values);
  write_ablation_csv(out_path, rows);
  for (const AblationRow& row : rows)
    std::printf("%s=%-10g far %.4f | bwt % .4f | forgetting %.4f | ft % .4f\n",
                param.c_str(), row.value, row.far, row.bwt, row.forgetting, row.ft);
  std::printf("ablation table -> %s\n", out_path.c_str());
  return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_path) {
  std::string md = make_report_markdown(in_dir);
  if (out_path.empty()) {
    std::fputs(md.c_str(), stdout);
  } else {
    write_text(out_path, md);
    std::printf("report -> %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual goal-conditioned RL laboratory"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand(
      "verify", "Run the randomized bound, identity and gradient suites");
  std::string suites = "bounds,pdl,corollaries,grad";
  int instances = 200;
  std::uint64_t seed = 12345;
  std::string support = "pairs";
  std::string verify_out = "bounds_report.json";
  verify->add_option("--suites", suites, "Comma list: bounds,pdl,corollaries,grad");
  verify->add_option("--instances", instances, "Random instances per suite")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", seed, "Suite seed");
  verify->add_option("--support", support, "Advantage support: pairs|states");
  verify->add_option("--out", verify_out, "Report JSON path");

  auto* train = app.add_subcommand("train", "Train one method on the configured stream");
  std::string train_config, train_method;
  std::uint64_t train_seed = 0;
  std::string train_out = "train_out";
  train->add_option("--config", train_config, "Config file")->required();
  train->add_option("--method", train_method, "Training method")->required();
  train->add_option("--seed", train_seed, "Run seed")->required();
  train->add_option("--out", train_out, "Artifact directory");

  auto* bench = app.add_subcommand("bench", "Sweep configured methods x seeds");
  std::string bench_config;
  std::string bench_out = "bench_out";
  bench->add_option("--config", bench_config, "Config file")->required();
  bench->add_option("--out", bench_out, "Artifact directory");

  auto* ablate = app.add_subcommand("ablate", "Sweep one loss weight");
  std::string ablate_config, ablate_param, ablate_values;
  std::string ablate_out = "ablation.csv";
  ablate->add_option("--config", ablate_config, "Config file")->required();
  ablate->add_option("--param", ablate_param, "beta_v|beta_q|alpha|eta")->required();
  ablate->add_option("--values", ablate_values, "Comma list of weight values")
      ->required();
  ablate->add_option("--out", ablate_out, "CSV path");

  auto* report = app.add_subcommand("report", "Consolidate a benchmark directory");
  std::string report_in, report_out;
  report->add_option("--in", report_in, "Benchmark output directory")->required();
  report->add_option("--out", report_out, "Markdown path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed())
      return cmd_verify(suites, instances, seed, support, verify_out);
    if (train->parsed()) return cmd_train(train_config, train_method, train_seed, train_out);
    if (bench->parsed()) return cmd_bench(bench_config, bench_out);
    if (ablate->parsed())
      return cmd_ablate(ablate_config, ablate_param, ablate_values, ablate_out);
    if (report->parsed()) return cmd_report(report_in, report_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
