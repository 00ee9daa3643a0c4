#include "crl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace crl {
namespace {

using Json = nlohmann::ordered_json;

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string compact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double or_nan(const std::optional<double>& v) {
  return v ? *v : std::numeric_limits<double>::quiet_NaN();
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  const double n = static_cast<double>(xs.size());
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  sd = 0.0;
  if (xs.size() < 2) return;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  sd = std::sqrt(acc / (n - 1.0));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

int worker_cap() {
  if (const char* s = std::getenv("CRL_LAB_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0' || v < 1)
      throw std::invalid_argument("CRL_LAB_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

Json metrics_to_json(const MetricsReport& r) {
  Json j;
  j["far"] = r.far;
  j["bwt"] = r.bwt ? Json(*r.bwt) : Json(nullptr);
  j["forgetting"] = r.forgetting ? Json(*r.forgetting) : Json(nullptr);
  j["ft"] = r.ft ? Json(*r.ft) : Json(nullptr);
  j["per_task_forgetting"] = r.per_task_forgetting;
  j["baseline"] = r.baseline;
  j["config_hash"] = r.config_hash;
  j["seeds"] = r.seeds;
  return j;
}

}  // namespace

std::string task_label(const TaskSpec& spec) {
  std::string out = spec.family == EnvFamily::kGridPickPlace ? "grid" : "point";
  out += "-L" + std::to_string(spec.layout_seed) + "-G";
  for (std::size_t i = 0; i < spec.goal_ids.size(); ++i) {
    if (i > 0) out += '.';
    out += std::to_string(spec.goal_ids[i]);
  }
  return out;
}

BenchCell run_cell(const BenchmarkConfig& config, Method method, std::uint64_t seed) {
  BenchCell cell;
  cell.method = method;
  cell.seed = seed;
  cell.stream = run_task_stream(config.stream, method, config.agent, seed);
  cell.matrix.r = cell.stream.transfer;
  for (const TaskSpec& spec : config.stream)
    cell.matrix.task_labels.push_back(task_label(spec));
  cell.matrix.seeds = {seed};
  cell.metrics = compute_metrics(cell.matrix, cell.stream.baseline);
  cell.metrics.config_hash = config.config_hash;
  return cell;
}

BenchResult run_benchmark(const BenchmarkConfig& config) {
  if (config.methods.empty()) throw std::invalid_argument("config lists no methods");
  if (config.seeds.empty()) throw std::invalid_argument("config lists no seeds");

  struct Job {
    Method method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Method m : config.methods)
    for (std::uint64_t s : config.seeds) jobs.push_back({m, s});

  std::vector<BenchCell> cells(jobs.size());
  const int workers =
      std::min<int>(worker_cap(), static_cast<int>(jobs.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i)
      cells[i] = run_cell(config, jobs[i].method, jobs[i].seed);
  } else {
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          cells[i] = run_cell(config, jobs[i].method, jobs[i].seed);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  BenchResult out;
  out.cells = std::move(cells);
  const std::size_t n_seeds = config.seeds.size();
  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    std::vector<double> far, bwt, forgetting, ft;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const MetricsReport& r = out.cells[m * n_seeds + s].metrics;
      far.push_back(r.far);
      bwt.push_back(or_nan(r.bwt));
      forgetting.push_back(or_nan(r.forgetting));
      ft.push_back(or_nan(r.ft));
    }
    MethodSummary row;
    row.method = config.methods[m];
    row.n_seeds = static_cast<int>(n_seeds);
    mean_std(far, row.far_mean, row.far_std);
    mean_std(bwt, row.bwt_mean, row.bwt_std);
    mean_std(forgetting, row.forgetting_mean, row.forgetting_std);
    mean_std(ft, row.ft_mean, row.ft_std);
    out.summary.push_back(row);
  }
  return out;
}

BenchResult run_benchmark_to(const std::filesystem::path& out_dir,
                             const BenchmarkConfig& config) {
  BenchResult result = run_benchmark(config);
  std::filesystem::create_directories(out_dir);
  for (const BenchCell& cell : result.cells)
    write_cell_artifacts(out_dir / method_name(cell.method) /
                             ("seed_" + std::to_string(cell.seed)),
                         cell);
  write_summary_csv(out_dir / "summary.csv", result);
  return result;
}

void write_transfer_csv(const std::filesystem::path& path, const TransferMatrix& matrix) {
  matrix.validate();
  if (matrix.task_labels.empty())
    throw std::invalid_argument("transfer matrix needs task labels for the CSV header");
  for (const std::string& label : matrix.task_labels)
    if (label.find(',') != std::string::npos || label.find('\n') != std::string::npos)
      throw std::invalid_argument("task label unusable in CSV: " + label);

  std::ofstream out = open_out(path);
  for (std::size_t i = 0; i < matrix.task_labels.size(); ++i)
    out << (i > 0 ? "," : "") << matrix.task_labels[i];
  out << '\n';
  for (const auto& row : matrix.r) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i > 0 ? "," : "") << fixed6(row[i]);
    out << '\n';
  }
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out = open_out(path);
  out << metrics_to_json(report).dump(2) << '\n';
}

void write_logs_jsonl(const std::filesystem::path& path,
                      const std::vector<UpdateLog>& logs) {
  std::ofstream out = open_out(path);
  for (const UpdateLog& log : logs) {
    Json j;
    j["stage"] = log.stage;
    j["update"] = log.update;
    j["epochs_run"] = log.epochs_run;
    j["loss_ppo"] = log.loss_ppo;
    j["loss_mc"] = log.loss_mc;
    j["loss_gcv"] = log.loss_gcv;
    j["loss_kl"] = log.loss_kl;
    j["loss_total"] = log.loss_total;
    j["approx_kl"] = log.approx_kl_final;
    j["eval_success"] = log.eval_success < 0.0 ? Json(nullptr) : Json(log.eval_success);
    out << j.dump() << '\n';
  }
}

void write_summary_csv(const std::filesystem::path& path, const BenchResult& result) {
  std::ofstream out = open_out(path);
  out << "method,far_mean,far_std,bwt_mean,bwt_std,forgetting_mean,forgetting_std,"
         "ft_mean,ft_std\n";
  for (const MethodSummary& row : result.summary) {
    out << method_name(row.method) << ',' << fixed6(row.far_mean) << ','
        << fixed6(row.far_std) << ',' << fixed6(row.bwt_mean) << ','
        << fixed6(row.bwt_std) << ',' << fixed6(row.forgetting_mean) << ','
        << fixed6(row.forgetting_std) << ',' << fixed6(row.ft_mean) << ','
        << fixed6(row.ft_std) << '\n';
  }
}

void write_cell_artifacts(const std::filesystem::path& dir, const BenchCell& cell) {
  std::filesystem::create_directories(dir / "logs");
  std::filesystem::create_directories(dir / "checkpoints");
  write_transfer_csv(dir / "transfer_matrix.csv", cell.matrix);
  write_metrics_json(dir / "metrics.json", cell.metrics);
  write_logs_jsonl(dir / "logs" / "train.jsonl", cell.stream.logs);
  for (std::size_t k = 0; k < cell.stream.stage_params.size(); ++k)
    save_checkpoint(cell.stream.stage_params[k],
                    (dir / "checkpoints" / ("stage_" + std::to_string(k + 1) + ".bin"))
                        .string());
}

std::vector<AblationRow> ablation_sweep(const BenchmarkConfig& config,
                                        const std::string& parameter,
                                        const std::vector<double>& values) {
  if (config.methods.empty()) throw std::invalid_argument("config lists no methods");
  if (values.empty()) throw std::invalid_argument("ablation needs at least one value");

  double LossWeights::*field = nullptr;
  if (parameter == "beta_v") field = &LossWeights::beta_v;
  else if (parameter == "beta_q") field = &LossWeights::beta_q;
  else if (parameter == "alpha") field = &LossWeights::alpha;
  else if (parameter == "eta") field = &LossWeights::eta;
  else throw std::invalid_argument("unknown ablation parameter: " + parameter);

  std::vector<AblationRow> rows;
  for (double value : values) {
    BenchmarkConfig sub = config;
    sub.methods = {config.methods.front()};
    sub.agent.weights.*field = value;
    sub.agent.weights.validate();
    BenchResult result = run_benchmark(sub);
    const MethodSummary& s = result.summary.front();
    rows.push_back({value, s.far_mean, s.bwt_mean, s.forgetting_mean, s.ft_mean});
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows) {
  std::ofstream out = open_out(path);
  out << "value,far,bwt,forgetting,ft\n";
  for (const AblationRow& row : rows)
    out << compact(row.value) << ',' << fixed6(row.far) << ',' << fixed6(row.bwt)
        << ',' << fixed6(row.forgetting) << ',' << fixed6(row.ft) << '\n';
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read: " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split_csv_line(line));
  return rows;
}

void append_table(std::string& md, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return;
  md += "|";
  for (const std::string& h : rows[0]) md += " " + h + " |";
  md += "\n|";
  for (std::size_t i = 0; i < rows[0].size(); ++i) md += " --- |";
  md += "\n";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    md += "|";
    for (const std::string& c : rows[r]) md += " " + c + " |";
    md += "\n";
  }
}

}  // namespace

std::string make_report_markdown(const std::filesystem::path& in_dir) {
  if (!std::filesystem::is_directory(in_dir))
    throw std::runtime_error("not a directory: " + in_dir.string());

  std::string md = "# Benchmark report\n\n";

  // Per-cell metrics, discovered on disk so the report also works on a
  // directory assembled from several train runs.
  struct CellRow {
    std::string method, seed;
    Json metrics;
  };
  std::vector<CellRow> cell_rows;
  std::vector<std::filesystem::path> method_dirs;
  for (const auto& entry : std::filesystem::directory_iterator(in_dir))
    if (entry.is_directory()) method_dirs.push_back(entry.path());
  std::sort(method_dirs.begin(), method_dirs.end());
  for (const auto& mdir : method_dirs) {
    std::vector<std::filesystem::path> seed_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(mdir))
      if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0)
        seed_dirs.push_back(entry.path());
    std::sort(seed_dirs.begin(), seed_dirs.end());
    for (const auto& sdir : seed_dirs) {
      const auto file = sdir / "metrics.json";
      if (!std::filesystem::exists(file)) continue;
      std::ifstream in(file);
      CellRow row;
      row.method = mdir.filename().string();
      row.seed = sdir.filename().string().substr(5);
      in >> row.metrics;
      cell_rows.push_back(std::move(row));
    }
  }

  std::string hash;
  for (const CellRow& row : cell_rows)
    if (row.metrics.contains("config_hash") && row.metrics["config_hash"].is_string()) {
      hash = row.metrics["config_hash"].get<std::string>();
      break;
    }
  if (!hash.empty()) md += "Config hash: `" + hash + "`\n\n";

  const auto summary_path = in_dir / "summary.csv";
  if (std::filesystem::exists(summary_path)) {
    md += "## Method summary (mean and sample std across seeds)\n\n";
    append_table(md, read_csv(summary_path));
    md += "\n";
  }

  if (!cell_rows.empty()) {
    md += "## Cells\n\n";
    std::vector<std::vector<std::string>> table;
    table.push_back({"method", "seed", "far", "bwt", "forgetting", "ft"});
    auto cell_num = [](const Json& j, const char* key) -> std::string {
      if (!j.contains(key) || j[key].is_null()) return "-";
      return fixed6(j[key].get<double>());
    };
    for (const CellRow& row : cell_rows)
      table.push_back({row.method, row.seed, cell_num(row.metrics, "far"),
                       cell_num(row.metrics, "bwt"), cell_num(row.metrics, "forgetting"),
                       cell_num(row.metrics, "ft")});
    append_table(md, table);
    md += "\n";
  }

  const auto ablation_path = in_dir / "ablation.csv";
  if (std::filesystem::exists(ablation_path)) {
    md += "## Ablation\n\n";
    append_table(md, read_csv(ablation_path));
    md += "\n";
  }
  return md;
}

// ---------------------------------------------------------------------------
// Gradient-correctness suite
// ---------------------------------------------------------------------------

namespace {

constexpr double kGradTol = 1e-4;
constexpr std::uint64_t kGradStreamBase = 0x67726164;  // distinct rng stream family

struct NamedBuilder {
  std::string name;
  std::function<Tape::Id(GraphNet&)> build;
};

}  // namespace

std::vector<BoundReport> run_grad_suite(const SuiteConfig& cfg) {
  if (cfg.instances < 1) throw std::invalid_argument("instances must be positive");
  std::vector<BoundReport> out;

  for (int inst = 0; inst < cfg.instances; ++inst) {
    Rng rng = make_rng(cfg.seed, kGradStreamBase + static_cast<std::uint64_t>(inst));
    const bool discrete = inst % 2 == 0;
    const ValueMode mode = (inst / 2) % 2 == 0 ? ValueMode::kV : ValueMode::kQ;

    TaskSpec spec;
    spec.family = discrete ? EnvFamily::kGridPickPlace : EnvFamily::kPointReach;
    spec.grid_size = 2;
    spec.layout_seed = rng();
    spec.goal_ids = {0, 1};
    spec.horizon = 12;
    spec.reward_mode = RewardMode::kShaped;
    spec.gamma = 0.9;
    spec.goal_code_dim = 4;
    auto env = make_task(spec);

    const int hidden = 4 + static_cast<int>(rng() % 5);
    ParameterStore behavior =
        init_network(env->obs_dim(), env->goal_code_dim(), {hidden},
                     env->action_spec(), mode, rng());
    ParameterStore eval_point =
        init_network(env->obs_dim(), env->goal_code_dim(), {hidden},
                     env->action_spec(), mode, rng());

    PPOConfig ppo;
    ppo.gamma = spec.gamma;
    RolloutBatch batch = collect_rollouts(*env, behavior, 2, rng());
    prepare_batch(batch, behavior, ppo);

    std::vector<BufferRecord> store;
    for (std::size_t i = 0; i < 4 && i < batch.steps.size(); ++i) {
      const RolloutStep& s = batch.steps[i * 2 % batch.steps.size()];
      BufferRecord r;
      r.obs = s.t.obs;
      r.goal_code = s.t.goal_code;
      r.action_discrete = s.t.action_discrete;
      r.action_continuous = s.t.action_continuous;
      r.anchor_log_prob = s.t.log_prob_behavior;
      r.v_old = uniform(rng, -0.5, 0.5);
      r.q_old = uniform(rng, -0.5, 0.5);
      r.mc_return = s.mc_return;
      ActionDistribution d = forward_policy(behavior, s.t.obs, s.t.goal_code);
      r.anchor_probs = d.probs;
      r.anchor_mean = d.mean;
      r.anchor_log_std = d.log_std;
      store.push_back(std::move(r));
    }
    std::vector<const BufferRecord*> recs;
    for (const BufferRecord& r : store) recs.push_back(&r);

    std::vector<NamedBuilder> builders;
    builders.push_back(
        {"ppo", [&](GraphNet& n) { return ppo_loss(n, batch, 0.2, 0.05); }});
    builders.push_back(
        {"replay-ppo", [&](GraphNet& n) { return replay_ppo_loss(n, recs, 0.2); }});
    builders.push_back({"replay-pg", [&](GraphNet& n) {
                          return replay_policy_gradient_loss(n, recs);
                        }});
    builders.push_back({"kl-div", [&](GraphNet& n) {
                          return kl_old_loss(n, recs, KlMode::kKlDiv, 0.7);
                        }});
    builders.push_back({"kl-bc", [&](GraphNet& n) {
                          return kl_old_loss(n, recs, KlMode::kBcMse, 0.7);
                        }});
    builders.push_back({"distill", [&](GraphNet& n) {
                          return distill_loss(n, behavior, batch, 0.5);
                        }});
    if (mode == ValueMode::kV) {
      builders.push_back({"mc-v", [&](GraphNet& n) { return mc_loss_v(n, batch, 0.8); }});
      builders.push_back(
          {"gcv-v", [&](GraphNet& n) { return gcv_loss_v(n, recs, 1.3); }});
    } else {
      builders.push_back({"mc-q", [&](GraphNet& n) { return mc_loss_q(n, batch, 0.8); }});
      builders.push_back(
          {"gcv-q", [&](GraphNet& n) { return gcv_loss_q(n, recs, 1.3); }});
    }
    builders.push_back({"total", [&](GraphNet& n) {
                          LossTerms t;
                          t.ppo = ppo_loss(n, batch, 0.2);
                          t.kl = kl_old_loss(n, recs, KlMode::kKlDiv, 0.7);
                          if (mode == ValueMode::kV) {
                            t.mc = mc_loss_v(n, batch, 0.8);
                            t.gcv = gcv_loss_v(n, recs, 1.3);
                          } else {
                            t.mc = mc_loss_q(n, batch, 0.8);
                            t.gcv = gcv_loss_q(n, recs, 1.3);
                          }
                          return total_loss(n.tape(), t);
                        }});

    const std::string suffix = std::string(mode == ValueMode::kV ? "V" : "Q") +
                               (discrete ? "-cat" : "-gauss") + "#" +
                               std::to_string(inst);
    for (NamedBuilder& nb : builders) {
      LossProbe probe;
      probe.value = [&](const ParameterStore& p) {
        Tape tape;
        GraphNet n(tape, p);
        return tape.value(nb.build(n));
      };
      probe.gradient = [&](const ParameterStore& p) {
        Tape tape;
        GraphNet n(tape, p);
        Tape::Id id = nb.build(n);
        tape.backward(id);
        return n.gradients();
      };
      GradCheckResult res = grad_check(eval_point, probe, 4, rng);
      BoundReport rep = make_bound_report("grad/" + nb.name + "/" + suffix,
                                          res.max_rel_err, kGradTol,
                                          {{"probes", static_cast<double>(res.probes)},
                                           {"redraws", static_cast<double>(res.redraws)}});
      out.push_back(std::move(rep));
    }
  }
  return out;
}

std::string bounds_report_json(const std::vector<BoundReport>& reports, int instances) {
  Json arr = Json::array();
  int failures = 0;
  double min_slack = std::numeric_limits<double>::infinity();
  for (const BoundReport& r : reports) {
    if (!r.holds) ++failures;
    min_slack = std::min(min_slack, r.slack);
    Json j;
    j["name"] = r.name;
    j["lhs"] = r.lhs;
    j["rhs"] = r.rhs;
    j["slack"] = r.slack;
    j["holds"] = r.holds;
    Json meta;
    for (const auto& [key, value] : r.metadata) meta[key] = value;
    j["metadata"] = meta;
    arr.push_back(std::move(j));
  }
  Json out;
  out["reports"] = std::move(arr);
  Json summary;
  summary["instances"] = instances;
  summary["failures"] = failures;
  summary["min_slack"] = reports.empty() ? Json(nullptr) : Json(min_slack);
  out["summary"] = std::move(summary);
  return out.dump(2) + "\n";
}

}  // namespace crl
