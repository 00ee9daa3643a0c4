#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace crl {

/// Per-stage success-rate matrix of a continual run: r[k][i] is the success
/// rate on task i after training stage k. Storage is 0-based; the reporting
/// conventions below follow the usual 1-based presentation, so "stage k" in a
/// comment means row k-1 here.
struct TransferMatrix {
  std::vector<std::vector<double>> r;
  std::vector<std::string> task_labels;  // optional; empty or one per task
  std::vector<std::uint64_t> seeds;      // provenance only

  int size() const { return static_cast<int>(r.size()); }
  void validate() const;  // square, at least 1x1, entries in [0, 1]
};

/// Scalar summaries of a transfer matrix. The continual quantities (bwt,
/// forgetting, ft) need at least two tasks and stay empty on a 1x1 matrix.
struct MetricsReport {
  double far = 0.0;                  // mean of the final row
  std::optional<double> bwt;         // mean final-minus-diagonal over old tasks
  std::optional<double> forgetting;  // mean drop from per-task peak
  std::optional<double> ft;          // mean pre-training transfer minus baseline
  std::vector<double> per_task_forgetting;  // tasks 1..K-1, empty when K == 1
  std::vector<double> baseline;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
};

/// far      = (1/K) sum_i r[K][i]
/// bwt      = (1/(K-1)) sum_{i<K} (r[K][i] - r[i][i])
/// f_i      = max_{k>=i} r[k][i] - r[K][i],  forgetting = mean over i < K
/// ft       = (1/(K-1)) sum_{i>=2} (r[i-1][i] - b[i])        (1-based form)
MetricsReport compute_metrics(const TransferMatrix& matrix,
                              const std::vector<double>& baselines);

}  // namespace crl
