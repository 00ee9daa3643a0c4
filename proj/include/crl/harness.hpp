#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crl/agent.hpp"
#include "crl/config.hpp"
#include "crl/metrics.hpp"
#include "crl/theory.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// Benchmark cells
// ---------------------------------------------------------------------------

/// Outcome of one (method, seed) run over the configured task stream.
struct BenchCell {
  Method method = Method::kSl;
  std::uint64_t seed = 0;
  TransferMatrix matrix;
  MetricsReport metrics;
  StreamResult stream;
};

/// Mean and sample standard deviation of each metric across seeds. With a
/// single seed the deviations are zero; on a single-task stream the continual
/// metrics are NaN (they do not exist for one task).
struct MethodSummary {
  Method method = Method::kSl;
  int n_seeds = 0;
  double far_mean = 0.0, far_std = 0.0;
  double bwt_mean = 0.0, bwt_std = 0.0;
  double forgetting_mean = 0.0, forgetting_std = 0.0;
  double ft_mean = 0.0, ft_std = 0.0;
};

struct BenchResult {
  std::vector<BenchCell> cells;        // method-major, seed-minor, config order
  std::vector<MethodSummary> summary;  // one row per configured method
};

/// Column label used for a task in artifacts: "<family>-L<layout>-G<ids>".
std::string task_label(const TaskSpec& spec);

BenchCell run_cell(const BenchmarkConfig& config, Method method, std::uint64_t seed);

/// Sweeps methods x seeds. Cells are independent and may run on a worker pool
/// (capped by the CRL_LAB_THREADS environment variable); results are folded
/// back in configuration order, so the outcome never depends on the worker
/// count.
BenchResult run_benchmark(const BenchmarkConfig& config);

/// run_benchmark plus artifacts: per-cell directories
/// <out_dir>/<method>/seed_<seed>/{transfer_matrix.csv, metrics.json,
/// logs/train.jsonl, checkpoints/stage_<k>.bin} and <out_dir>/summary.csv.
BenchResult run_benchmark_to(const std::filesystem::path& out_dir,
                             const BenchmarkConfig& config);

// ---------------------------------------------------------------------------
// Artifact writers. CSV numbers are fixed at 6 decimals and JSON key order is
// fixed, so identical inputs produce byte-identical files.
// ---------------------------------------------------------------------------

void write_transfer_csv(const std::filesystem::path& path, const TransferMatrix& matrix);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report);
void write_logs_jsonl(const std::filesystem::path& path,
                      const std::vector<UpdateLog>& logs);
void write_summary_csv(const std::filesystem::path& path, const BenchResult& result);
void write_cell_artifacts(const std::filesystem::path& dir, const BenchCell& cell);

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

/// One ablation sweep point: the overridden weight value and the metric means
/// across the configured seeds.
struct AblationRow {
  double value = 0.0;
  double far = 0.0;
  double bwt = 0.0;
  double forgetting = 0.0;
  double ft = 0.0;
};

/// Re-runs the benchmark for the first configured method with the named loss
/// weight (one of beta_v, beta_q, alpha, eta) overridden to each value in
/// turn.
std::vector<AblationRow> ablation_sweep(const BenchmarkConfig& config,
                                        const std::string& parameter,
                                        const std::vector<double>& values);

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Consolidated markdown over a benchmark output directory: the method
/// summary table plus every per-cell metrics.json found underneath, and the
/// ablation table when ablation.csv is present.
std::string make_report_markdown(const std::filesystem::path& in_dir);

// ---------------------------------------------------------------------------
// Gradient-correctness suite
// ---------------------------------------------------------------------------

/// Finite-difference checks of every loss term over cfg.instances randomized
/// learner configurations, reported in the bound-suite shape: lhs is the
/// maximum relative gradient error of one term, rhs the 1e-4 tolerance.
std::vector<BoundReport> run_grad_suite(const SuiteConfig& cfg);

/// Serializes bound reports plus a {instances, failures, min_slack} summary
/// block to pretty-printed JSON.
std::string bounds_report_json(const std::vector<BoundReport>& reports, int instances);

}  // namespace crl
