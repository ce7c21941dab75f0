#include "crdnn/eval_bench.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "crdnn/error.hpp"

namespace crdnn {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

// One timed network pass must last at least this long, else passes are batched.
constexpr double kMinTimedSeconds = 200e-6;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double metric_of(PolicyKind kind, const EnsembleMetrics& m) {
  return kind == PolicyKind::se ? m.ergodic_rate : m.ee;
}

double metric_error_of(PolicyKind kind, const EnsembleMetrics& m) {
  return kind == PolicyKind::se ? m.rate_std_error : m.ee_std_error;
}

bool same_params(const SystemParams& a, const SystemParams& b) {
  auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(y)); };
  return close(a.p_p, b.p_p) && close(a.noise_var, b.noise_var) && close(a.zeta, b.zeta) &&
         close(a.p_c, b.p_c) && close(a.p_th, b.p_th) && close(a.p_in, b.p_in);
}

void check_model_matches(const MlpModel& model, PolicyKind kind, const SystemParams& params) {
  if (!model.training_meta) return;
  const auto& meta = *model.training_meta;
  if (meta.kind != kind) {
    fail(ErrorCode::config_mismatch, "model was trained for kind " + to_string(meta.kind) +
                                         ", evaluation asks for " + to_string(kind));
  }
  if (!same_params(meta.params, params)) {
    std::ostringstream os;
    os << "model was trained for p_th=" << meta.params.p_th << ", p_in=" << meta.params.p_in
       << " (and its other system parameters); evaluation uses p_th=" << params.p_th
       << ", p_in=" << params.p_in;
    fail(ErrorCode::config_mismatch, os.str());
  }
}

json row_to_json(const EvalRow& r) {
  return {{"p_in", r.p_in},
          {"metric_conv", r.metric_conventional},
          {"metric_dnn", r.metric_dnn},
          {"quality_ratio", r.quality_ratio},
          {"metric_std_error", r.metric_std_error},
          {"time_conv_s", r.time_conventional},
          {"time_dnn_s", r.time_dnn},
          {"time_ratio", r.time_ratio},
          {"avg_power_dnn", r.avg_power_dnn},
          {"avg_interference_dnn", r.avg_interference_dnn},
          {"constraint_flag", r.constraint_flag},
          {"conventional_duals",
           {{"tau", r.conventional_duals.tau}, {"mu", r.conventional_duals.mu}, {"eta", r.conventional_duals.eta}}}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out.precision(12);
  return out;
}

}  // namespace

double median(std::vector<double> xs) {
  require(!xs.empty(), "median of an empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t mid = xs.size() / 2;
  return xs.size() % 2 == 1 ? xs[mid] : 0.5 * (xs[mid - 1] + xs[mid]);
}

EvalRow compare_policies(PolicyKind kind, const kernels::PreparedEnsemble& test,
                         const DualState& conventional_duals, std::span<const double> dnn_powers,
                         const EvalOptions& opts) {
  const SystemParams& params = test.params;
  const DualState duals = kind == PolicyKind::se
                              ? DualState{conventional_duals.tau, conventional_duals.mu, 0.0}
                              : conventional_duals;
  const auto conv = metrics_from_sums(
      kernels::policy_metric_sums(test, detail::price_base(duals, params), duals.mu), test.size(), params);

  std::vector<double> powers(dnn_powers.begin(), dnn_powers.end());
  auto dnn = metrics_from_powers(test, powers);
  if (opts.posthoc_scaling) {
    double factor = 1.0;
    if (dnn.avg_power > 0.0) factor = std::min(factor, params.p_th / dnn.avg_power);
    if (dnn.avg_interference > 0.0) factor = std::min(factor, params.p_in / dnn.avg_interference);
    if (factor < 1.0) {
      for (double& p : powers) p *= factor;
      dnn = metrics_from_powers(test, powers);
    }
  }

  EvalRow row;
  row.p_in = params.p_in;
  row.metric_conventional = metric_of(kind, conv);
  row.metric_dnn = metric_of(kind, dnn);
  row.quality_ratio = row.metric_conventional > 0.0 ? row.metric_dnn / row.metric_conventional : 0.0;
  row.metric_std_error = metric_error_of(kind, conv);
  row.avg_power_dnn = dnn.avg_power;
  row.avg_interference_dnn = dnn.avg_interference;
  row.constraint_flag = dnn.avg_power > opts.flag_ratio * params.p_th ||
                        dnn.avg_interference > opts.flag_ratio * params.p_in;
  row.conventional_duals = duals;
  return row;
}

PolicyTiming time_policies(const MlpModel& model, PolicyKind kind, const SystemParams& params,
                           std::span<const ChannelRealization> solve_ensemble,
                           std::span<const ChannelRealization> test, const SolverOptions& solver,
                           int repetitions) {
  require(repetitions >= 3, "time_policies: repetitions must be >= 3");
  require(!test.empty(), "time_policies: test ensemble is empty");
  kernels::ScopedThreads single(1);

  PolicyTiming timing;
  std::vector<double> conv_powers(test.size());
  auto run_conventional = [&] {
    const auto prepared = kernels::prepare(solve_ensemble, params);
    SolveReport report = solve(kind, prepared, solver);
    const auto test_prepared = kernels::prepare(test, params);
    kernels::water_fill_all(test_prepared, detail::price_base(report.duals, params), report.duals.mu,
                            conv_powers);
    return report;
  };
  double sink = 0.0;
  auto run_dnn = [&](int passes) {
    for (int i = 0; i < passes; ++i) sink += forward_batch(model, test).back();
  };

  timing.solve_report = run_conventional();  // warmup
  run_dnn(1);

  // Grow the pass count until one timed sample clears the timer floor.
  for (;;) {
    const auto t0 = Clock::now();
    run_dnn(timing.dnn_repeat);
    if (seconds_since(t0) >= kMinTimedSeconds || timing.dnn_repeat >= (1 << 20)) break;
    timing.dnn_repeat *= 2;
  }

  for (int r = 0; r < repetitions; ++r) {
    auto t0 = Clock::now();
    timing.solve_report = run_conventional();
    timing.conventional_samples.push_back(seconds_since(t0));

    t0 = Clock::now();
    run_dnn(timing.dnn_repeat);
    timing.dnn_samples.push_back(seconds_since(t0) / timing.dnn_repeat);
  }
  if (!std::isfinite(sink)) fail(ErrorCode::invalid_argument, "network produced non-finite output");
  timing.conventional_s = median(timing.conventional_samples);
  timing.dnn_s = median(timing.dnn_samples);
  return timing;
}

EvalRow evaluate_pair(const MlpModel& model, PolicyKind kind, const SystemParams& params,
                      std::span<const ChannelRealization> solve_ensemble,
                      std::span<const ChannelRealization> test, const EvalOptions& opts) {
  params.validate();
  check_model_matches(model, kind, params);
  const auto timing = time_policies(model, kind, params, solve_ensemble, test, opts.solver, opts.repetitions);
  if (!timing.solve_report.converged) {
    fail(ErrorCode::non_convergence, "conventional " + to_string(kind) + " solve did not converge at p_in=" +
                                         std::to_string(params.p_in));
  }
  const auto test_prepared = kernels::prepare(test, params);
  const auto powers = forward_batch(model, test);
  EvalRow row = compare_policies(kind, test_prepared, timing.solve_report.duals, powers, opts);
  row.time_conventional = timing.conventional_s;
  row.time_dnn = timing.dnn_s;
  row.time_ratio = timing.dnn_s / timing.conventional_s;
  return row;
}

EvalReport sweep(const std::map<double, MlpModel>& models, PolicyKind kind, const SystemParams& base,
                 std::vector<double> p_in_values, std::span<const ChannelRealization> solve_ensemble,
                 std::span<const ChannelRealization> test, const EvalOptions& opts) {
  std::sort(p_in_values.begin(), p_in_values.end());
  EvalReport report;
  report.kind = kind;
  report.environment = environment_description();
  for (double p_in : p_in_values) {
    const auto it = models.find(p_in);
    if (it == models.end()) {
      fail(ErrorCode::missing_prerequisite, "no trained model for p_in=" + std::to_string(p_in));
    }
    SystemParams params = base;
    params.p_in = p_in;
    report.rows.push_back(evaluate_pair(it->second, kind, params, solve_ensemble, test, opts));
  }
  return report;
}

json environment_description() {
  json env;
#if defined(__clang__)
  env["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  env["compiler"] = "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__) + "." +
                    std::to_string(__GNUC_PATCHLEVEL__);
#else
  env["compiler"] = "unknown";
#endif
  env["openmp_max_threads"] = kernels::max_threads();
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
  env["timing_threads"] = 1;
  return env;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kReportCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.p_in << ',' << r.metric_conventional << ',' << r.metric_dnn << ',' << r.quality_ratio << ','
        << r.time_conventional << ',' << r.time_dnn << ',' << r.time_ratio << ',' << r.avg_power_dnn << ','
        << r.avg_interference_dnn << '\n';
  }
  if (!out) fail(ErrorCode::io_failure, "failed writing '" + path.string() + "'");
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  json j;
  j["kind"] = to_string(report.kind);
  j["config"] = report.config;
  j["environment"] = report.environment;
  j["rows"] = json::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_to_json(r));
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::io_failure, "failed writing '" + path.string() + "'");
}

std::vector<CurveRow> training_curves(const TrainHistory& history, int sample_every) {
  require(!history.points.empty(), "training_curves: history is empty");
  require(sample_every >= 1, "training_curves: sample_every must be >= 1");
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < history.points.size(); i += static_cast<std::size_t>(sample_every)) {
    const auto& p = history.points[i];
    rows.push_back({p.step, p.sample_prediction, p.sample_target, p.batch_mse, p.holdout_mse});
  }
  return rows;
}

void write_curves_csv(std::span<const CurveRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kCurveCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << r.predicted << ',' << r.target << ',' << r.batch_mse << ',';
    if (r.holdout_mse) out << *r.holdout_mse;
    out << '\n';
  }
  if (!out) fail(ErrorCode::io_failure, "failed writing '" + path.string() + "'");
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::vector<CurveRow> rows;
  rows.reserve(history.points.size());
  for (const auto& p : history.points) {
    rows.push_back({p.step, p.sample_prediction, p.sample_target, p.batch_mse, p.holdout_mse});
  }
  write_curves_csv(rows, path);
}

TrainHistory read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_failure, "cannot open history file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCurveCsvHeader) {
    fail(ErrorCode::format_mismatch, "'" + path.string() + "' is not a training history file");
  }
  TrainHistory history;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 5) {
      fail(ErrorCode::format_mismatch, "'" + path.string() + "' line " + std::to_string(line_no) +
                                           ": expected 5 fields");
    }
    try {
      HistoryPoint p;
      p.step = std::stol(fields[0]);
      p.sample_prediction = std::stod(fields[1]);
      p.sample_target = std::stod(fields[2]);
      p.batch_mse = std::stod(fields[3]);
      if (!fields[4].empty()) p.holdout_mse = std::stod(fields[4]);
      history.points.push_back(p);
    } catch (const std::exception&) {
      fail(ErrorCode::format_mismatch, "'" + path.string() + "' line " + std::to_string(line_no) +
                                           ": unparsable number");
    }
  }
  if (!history.points.empty()) history.steps = history.points.back().step;
  return history;
}

std::vector<double> smooth(std::span<const double> xs, std::size_t window) {
  require(window >= 1, "smooth: window must be >= 1");
  std::vector<double> out(xs.size());
  std::vector<double> prefix(xs.size() + 1, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) prefix[i + 1] = prefix[i] + xs[i];
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(xs.size(), lo + window);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

}  // namespace crdnn
