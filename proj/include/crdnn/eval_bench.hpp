#pragma once

// Conventional-vs-network comparison: policy quality on a held-out test
// ensemble, wall-clock timing of both policies, training-curve export.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crdnn/kernels.hpp"
#include "crdnn/mlp.hpp"
#include "crdnn/oracle_solver.hpp"

namespace crdnn {

struct EvalOptions {
  SolverOptions solver;
  int repetitions = 5;           // timed runs after one warmup
  bool posthoc_scaling = false;  // scale network powers back inside both budgets
  double flag_ratio = 1.05;      // audit flag when a budget is exceeded by more than 5%
};

struct EvalRow {
  double p_in = 0.0;
  double metric_conventional = 0.0;  // ergodic rate (SE) or EE (EE)
  double metric_dnn = 0.0;
  double quality_ratio = 0.0;
  double metric_std_error = 0.0;     // MC standard error of metric_conventional
  double time_conventional = 0.0;    // s
  double time_dnn = 0.0;             // s
  double time_ratio = 0.0;
  double avg_power_dnn = 0.0;
  double avg_interference_dnn = 0.0;
  bool constraint_flag = false;
  DualState conventional_duals;
};

struct EvalReport {
  PolicyKind kind = PolicyKind::se;
  std::vector<EvalRow> rows;  // ascending p_in
  nlohmann::json config;      // echoed into the sidecar
  nlohmann::json environment;
};

struct PolicyTiming {
  double conventional_s = 0.0;  // median
  double dnn_s = 0.0;           // median, per pass over the test ensemble
  std::vector<double> conventional_samples;
  std::vector<double> dnn_samples;
  int dnn_repeat = 1;  // passes per timed sample, raised when one pass is below timer resolution
  SolveReport solve_report;
};

double median(std::vector<double> xs);

/// Quality half of an EvalRow: both policies scored on `test`.
EvalRow compare_policies(PolicyKind kind, const kernels::PreparedEnsemble& test,
                         const DualState& conventional_duals, std::span<const double> dnn_powers,
                         const EvalOptions& opts = {});

/// Conventional time = prepare + full dual/Dinkelbach solve on `solve_ensemble`
/// + policy application on `test`; network time = forward passes over `test`.
PolicyTiming time_policies(const MlpModel& model, PolicyKind kind, const SystemParams& params,
                           std::span<const ChannelRealization> solve_ensemble,
                           std::span<const ChannelRealization> test, const SolverOptions& solver,
                           int repetitions);

EvalRow evaluate_pair(const MlpModel& model, PolicyKind kind, const SystemParams& params,
                      std::span<const ChannelRealization> solve_ensemble,
                      std::span<const ChannelRealization> test, const EvalOptions& opts);

/// One row per p_in (ascending); `models` is keyed by p_in.
EvalReport sweep(const std::map<double, MlpModel>& models, PolicyKind kind, const SystemParams& base,
                 std::vector<double> p_in_values, std::span<const ChannelRealization> solve_ensemble,
                 std::span<const ChannelRealization> test, const EvalOptions& opts);

inline constexpr const char* kReportCsvHeader =
    "p_in,metric_conv,metric_dnn,quality_ratio,time_conv_s,time_dnn_s,time_ratio,avg_power_dnn,"
    "avg_interference_dnn";

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);
nlohmann::json environment_description();

struct CurveRow {
  long step = 0;
  double predicted = 0.0;
  double target = 0.0;
  double batch_mse = 0.0;
  std::optional<double> holdout_mse;
};

/// Every `sample_every`-th history point, starting with the first.
std::vector<CurveRow> training_curves(const TrainHistory& history, int sample_every);

inline constexpr const char* kCurveCsvHeader = "step,predicted,target,batch_mse,holdout_mse";

void write_curves_csv(std::span<const CurveRow> rows, const std::filesystem::path& path);
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);
TrainHistory read_history_csv(const std::filesystem::path& path);

/// Centered moving average; the first and last window/2 points use the
/// available neighbours.
std::vector<double> smooth(std::span<const double> xs, std::size_t window);

}  // namespace crdnn
