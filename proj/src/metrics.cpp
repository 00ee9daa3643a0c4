#include "crl/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace crl {

void TransferMatrix::validate() const {
  if (r.empty()) throw std::invalid_argument("transfer matrix needs at least one task");
  for (const auto& row : r)
    if (row.size() != r.size())
      throw std::invalid_argument("transfer matrix must be square");
  for (const auto& row : r)
    for (double v : row)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("transfer entries must lie in [0, 1]");
  if (!task_labels.empty() && task_labels.size() != r.size())
    throw std::invalid_argument("task labels must be empty or one per task");
}

MetricsReport compute_metrics(const TransferMatrix& matrix,
                              const std::vector<double>& baselines) {
  matrix.validate();
  const int k_tasks = matrix.size();
  if (static_cast<int>(baselines.size()) != k_tasks)
    throw std::invalid_argument("baseline length must match the task count");

  MetricsReport rep;
  rep.baseline = baselines;
  rep.seeds = matrix.seeds;

  const std::vector<double>& final_row = matrix.r[static_cast<std::size_t>(k_tasks) - 1];
  double far = 0.0;
  for (double v : final_row) far += v;
  rep.far = far / static_cast<double>(k_tasks);

  if (k_tasks < 2) return rep;

  double bwt = 0.0;
  for (int i = 0; i + 1 < k_tasks; ++i)
    bwt += final_row[static_cast<std::size_t>(i)] -
           matrix.r[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  rep.bwt = bwt / static_cast<double>(k_tasks - 1);

  double f_sum = 0.0;
  for (int i = 0; i + 1 < k_tasks; ++i) {
    double peak = 0.0;
    for (int k = i; k < k_tasks; ++k)
      peak = std::max(peak, matrix.r[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]);
    double f_i = peak - final_row[static_cast<std::size_t>(i)];
    rep.per_task_forgetting.push_back(f_i);
    f_sum += f_i;
  }
  rep.forgetting = f_sum / static_cast<double>(k_tasks - 1);

  double ft = 0.0;
  for (int i = 1; i < k_tasks; ++i)
    ft += matrix.r[static_cast<std::size_t>(i) - 1][static_cast<std::size_t>(i)] -
          baselines[static_cast<std::size_t>(i)];
  rep.ft = ft / static_cast<double>(k_tasks - 1);
  return rep;
}

}  // namespace crl
