#include "crdnn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "crdnn/checksum.hpp"
#include "crdnn/error.hpp"
#include "crdnn/kernels.hpp"
#include "crdnn/rng.hpp"

namespace crdnn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Derived seed streams.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kShuffleStream = 4;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) fail(ErrorCode::invalid_argument, "config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      fail(ErrorCode::invalid_argument, "config: unknown key '" + key + "' in '" + where + "'");
    }
  }
}

template <class T>
void take(const json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_argument,
         "config: '" + where + "." + key + "' has the wrong type (" + obj.at(key).dump() + ")");
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

fs::path ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

void require_file(const fs::path& path, const std::string& what, const std::string& stage) {
  if (!fs::exists(path)) {
    fail(ErrorCode::missing_prerequisite,
         what + " '" + path.string() + "' not found; run `crdnn " + stage + "` first");
  }
}

json metrics_json(const EnsembleMetrics& m) {
  return {{"n", m.n},
          {"avg_power", m.avg_power},
          {"avg_interference", m.avg_interference},
          {"ergodic_rate", m.ergodic_rate},
          {"avg_cost", m.avg_cost},
          {"ee", m.ee},
          {"rate_std_error", m.rate_std_error},
          {"ee_std_error", m.ee_std_error}};
}

json seeds_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"train_ensemble", cfg.train_distribution().seed},
          {"test_ensemble", cfg.test_distribution().seed},
          {"init", cfg.init_seed()},
          {"shuffle", cfg.train_config().shuffle_seed}};
}

}  // namespace

// -- RunConfig ------------------------------------------------------------------

void RunConfig::validate() const {
  system.validate();
  channel.validate();
  solver.validate();
  train.validate();
  require(!hidden.empty(), "hidden must list at least one layer width");
  for (int w : hidden) require(w >= 1, "hidden layer widths must be >= 1");
  require(n_train >= 1, "n_train must be >= 1");
  require(n_test >= 1, "n_test must be >= 1");
  require(!sweep.empty(), "sweep must not be empty");
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    require(std::isfinite(sweep[i]) && sweep[i] > 0.0, "sweep values must be finite and > 0");
    if (i > 0) require(sweep[i] > sweep[i - 1], "sweep must be strictly increasing");
  }
  require(threads >= 0, "threads must be >= 0");
  require(repetitions >= 3, "repetitions must be >= 3");
}

std::vector<int> RunConfig::dims() const {
  std::vector<int> d{3};
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(1);
  return d;
}

SystemParams RunConfig::params_at(double p_in) const {
  SystemParams p = system;
  p.p_in = p_in;
  return p;
}

ChannelDistribution RunConfig::train_distribution() const {
  ChannelDistribution d = channel;
  d.seed = rng::derive(seed, kTrainStream);
  return d;
}

ChannelDistribution RunConfig::test_distribution() const {
  ChannelDistribution d = channel;
  d.seed = rng::derive(seed, kTestStream);
  return d;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.shuffle_seed = rng::derive(seed, kShuffleStream);
  return t;
}

std::uint64_t RunConfig::init_seed() const { return rng::derive(seed, kInitStream); }

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.solver = solver;
  o.repetitions = repetitions;
  o.posthoc_scaling = posthoc_scaling;
  return o;
}

json to_json(const RunConfig& c) {
  return {
      {"system",
       {{"p_p", c.system.p_p},
        {"noise_var", c.system.noise_var},
        {"zeta", c.system.zeta},
        {"p_c", c.system.p_c},
        {"p_th", c.system.p_th},
        {"p_in", c.system.p_in}}},
      {"channel", {{"mean_ss", c.channel.mean_ss}, {"mean_sp", c.channel.mean_sp}, {"mean_ps", c.channel.mean_ps}}},
      {"solver",
       {{"step_size", c.solver.step_size},
        {"max_dual_iters", c.solver.max_dual_iters},
        {"dual_tol", c.solver.dual_tol},
        {"dinkelbach_tol", c.solver.dinkelbach_tol},
        {"max_dinkelbach_iters", c.solver.max_dinkelbach_iters},
        {"diminishing_step", c.solver.diminishing_step},
        {"initial_tau", c.solver.initial_tau},
        {"initial_mu", c.solver.initial_mu}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"eval_every", c.train.eval_every},
        {"holdout_every", c.train.holdout_every},
        {"lr_decay", c.train.lr_decay},
        {"decay_every_epochs", c.train.decay_every_epochs},
        {"normalize_inputs", c.train.normalize_inputs},
        {"log_inputs", c.train.log_inputs},
        {"scale_targets", c.train.scale_targets},
        {"hidden", c.hidden}}},
      {"n_train", c.n_train},
      {"n_test", c.n_test},
      {"sweep", c.sweep},
      {"out", c.out.string()},
      {"seed", c.seed},
      {"threads", c.threads},
      {"eval", {{"repetitions", c.repetitions}, {"posthoc_scaling", c.posthoc_scaling}}},
  };
}

RunConfig apply_json(const json& j, RunConfig c) {
  reject_unknown(j, {"system", "channel", "solver", "train", "n_train", "n_test", "sweep", "out", "seed",
                     "threads", "eval"},
                 "<root>");
  if (j.contains("system")) {
    const json& s = j.at("system");
    reject_unknown(s, {"p_p", "noise_var", "zeta", "p_c", "p_th", "p_in"}, "system");
    take(s, "p_p", c.system.p_p, "system");
    take(s, "noise_var", c.system.noise_var, "system");
    take(s, "zeta", c.system.zeta, "system");
    take(s, "p_c", c.system.p_c, "system");
    take(s, "p_th", c.system.p_th, "system");
    take(s, "p_in", c.system.p_in, "system");
  }
  if (j.contains("channel")) {
    const json& s = j.at("channel");
    reject_unknown(s, {"mean_ss", "mean_sp", "mean_ps"}, "channel");
    take(s, "mean_ss", c.channel.mean_ss, "channel");
    take(s, "mean_sp", c.channel.mean_sp, "channel");
    take(s, "mean_ps", c.channel.mean_ps, "channel");
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    reject_unknown(s, {"step_size", "max_dual_iters", "dual_tol", "dinkelbach_tol", "max_dinkelbach_iters",
                       "diminishing_step", "initial_tau", "initial_mu"},
                   "solver");
    take(s, "step_size", c.solver.step_size, "solver");
    take(s, "max_dual_iters", c.solver.max_dual_iters, "solver");
    take(s, "dual_tol", c.solver.dual_tol, "solver");
    take(s, "dinkelbach_tol", c.solver.dinkelbach_tol, "solver");
    take(s, "max_dinkelbach_iters", c.solver.max_dinkelbach_iters, "solver");
    take(s, "diminishing_step", c.solver.diminishing_step, "solver");
    take(s, "initial_tau", c.solver.initial_tau, "solver");
    take(s, "initial_mu", c.solver.initial_mu, "solver");
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    reject_unknown(s, {"batch_size", "learning_rate", "epochs", "eval_every", "holdout_every", "lr_decay",
                       "decay_every_epochs", "normalize_inputs", "log_inputs", "scale_targets", "hidden"},
                   "train");
    take(s, "batch_size", c.train.batch_size, "train");
    take(s, "learning_rate", c.train.learning_rate, "train");
    take(s, "epochs", c.train.epochs, "train");
    take(s, "eval_every", c.train.eval_every, "train");
    take(s, "holdout_every", c.train.holdout_every, "train");
    take(s, "lr_decay", c.train.lr_decay, "train");
    take(s, "decay_every_epochs", c.train.decay_every_epochs, "train");
    take(s, "normalize_inputs", c.train.normalize_inputs, "train");
    take(s, "log_inputs", c.train.log_inputs, "train");
    take(s, "scale_targets", c.train.scale_targets, "train");
    take(s, "hidden", c.hidden, "train");
  }
  take(j, "n_train", c.n_train, "<root>");
  take(j, "n_test", c.n_test, "<root>");
  take(j, "sweep", c.sweep, "<root>");
  std::string out = c.out.string();
  take(j, "out", out, "<root>");
  c.out = out;
  take(j, "seed", c.seed, "<root>");
  take(j, "threads", c.threads, "<root>");
  if (j.contains("eval")) {
    const json& s = j.at("eval");
    reject_unknown(s, {"repetitions", "posthoc_scaling"}, "eval");
    take(s, "repetitions", c.repetitions, "eval");
    take(s, "posthoc_scaling", c.posthoc_scaling, "eval");
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::invalid_argument, "cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_argument, "config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return apply_json(j);
}

std::uint64_t config_checksum(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("out");
  j.erase("threads");
  Fnv1a h;
  h.update(j.dump());
  return h.digest();
}

std::string point_tag(double p_in) {
  std::ostringstream os;
  os << p_in;
  return os.str();
}

namespace layout {

fs::path dataset(const RunConfig& cfg, PolicyKind kind, double p_in) {
  return cfg.out / "data" / (to_string(kind) + "_pin" + point_tag(p_in) + ".crds");
}
fs::path model(const RunConfig& cfg, PolicyKind kind, double p_in) {
  return cfg.out / "models" / (to_string(kind) + "_pin" + point_tag(p_in) + ".json");
}
fs::path history(const RunConfig& cfg, PolicyKind kind, double p_in) {
  return cfg.out / "models" / (to_string(kind) + "_pin" + point_tag(p_in) + "_history.csv");
}
fs::path curves(const RunConfig& cfg, PolicyKind kind, double p_in) {
  return cfg.out / "reports" / (to_string(kind) + "_pin" + point_tag(p_in) + "_curves.csv");
}
fs::path report_csv(const RunConfig& cfg, PolicyKind kind) {
  return cfg.out / "reports" / (to_string(kind) + "_eval.csv");
}
fs::path report_json(const RunConfig& cfg, PolicyKind kind) {
  return cfg.out / "reports" / (to_string(kind) + "_eval.json");
}
fs::path bench_csv(const RunConfig& cfg, PolicyKind kind) {
  return cfg.out / "reports" / (to_string(kind) + "_bench.csv");
}
fs::path sidecar(const fs::path& file) { return fs::path(file.string() + ".meta.json"); }

}  // namespace layout

json provenance(const RunConfig& cfg, const std::string& stage) {
  return {{"stage", stage},
          {"created_utc", utc_timestamp()},
          {"rng", rng::kAlgorithm},
          {"seeds", seeds_json(cfg)},
          {"config_checksum", hex(config_checksum(cfg))},
          {"config", to_json(cfg)}};
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(ensure_parent(path), std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::io_failure, "failed writing '" + path.string() + "'");
}

json report_to_json(const SolveReport& r, const RunConfig& cfg) {
  return {{"kind", to_string(r.kind)},
          {"p_in", cfg.system.p_in},
          {"duals", {{"tau", r.duals.tau}, {"mu", r.duals.mu}, {"eta", r.duals.eta}}},
          {"converged", r.converged},
          {"dual_iterations", r.dual_iterations},
          {"dinkelbach_iterations", r.dinkelbach_iterations},
          {"power_residual", r.power_residual},
          {"interference_residual", r.interference_residual},
          {"eta_history", r.eta_history},
          {"metrics", metrics_json(r.metrics)},
          {"n", cfg.n_train},
          {"seed", cfg.seed},
          {"config_checksum", hex(config_checksum(cfg))}};
}

// -- stages -----------------------------------------------------------------------

SolveReport run_solve(const RunConfig& cfg, PolicyKind kind) {
  cfg.validate();
  const auto ensemble = sample_ensemble(cfg.train_distribution(), cfg.n_train);
  return solve(kind, kernels::prepare(ensemble, cfg.system), cfg.solver);
}

void run_gen(const RunConfig& cfg, PolicyKind kind, bool also_csv, std::ostream& log) {
  cfg.validate();
  for (double p_in : cfg.sweep) {
    const SystemParams params = cfg.params_at(p_in);
    const Dataset ds = generate_dataset(cfg.train_distribution(), cfg.n_train, params, kind, cfg.solver);
    const fs::path path = layout::dataset(cfg, kind, p_in);
    write_dataset(ds, ensure_parent(path));
    json meta = provenance(cfg, "gen");
    meta["kind"] = to_string(kind);
    meta["p_in"] = p_in;
    meta["rows"] = ds.size();
    meta["dataset_checksum"] = hex(ds.checksum());
    meta["duals"] = {{"tau", ds.meta.duals.tau}, {"mu", ds.meta.duals.mu}, {"eta", ds.meta.duals.eta}};
    write_json(meta, layout::sidecar(path));
    log << "wrote " << path.string() << " (" << ds.size() << " rows)\n";
    if (also_csv) {
      fs::path csv = path;
      csv.replace_extension(".csv");
      write_dataset_csv(ds, csv);
      log << "wrote " << csv.string() << "\n";
    }
  }
}

void run_train(const RunConfig& cfg, PolicyKind kind, std::ostream& log) {
  cfg.validate();
  const auto test_inputs = sample_ensemble(cfg.test_distribution(), cfg.n_test);
  for (double p_in : cfg.sweep) {
    const fs::path data_path = layout::dataset(cfg, kind, p_in);
    require_file(data_path, "dataset", "gen");
    const Dataset ds = read_dataset(data_path);
    if (ds.meta.kind != kind || !(ds.meta.params == cfg.params_at(p_in))) {
      fail(ErrorCode::config_mismatch, "dataset '" + data_path.string() +
                                           "' was generated with a different configuration; re-run `crdnn gen`");
    }
    const Dataset holdout = label_ensemble(test_inputs, ds.meta);
    const TrainConfig tcfg = cfg.train_config();
    TrainResult result = train(init_model(cfg.dims(), cfg.init_seed()), ds, tcfg, &holdout);
    result.model.training_meta =
        TrainingMeta{cfg.init_seed(), tcfg, ds.checksum(), ds.meta.params, kind, config_checksum(cfg)};

    const fs::path model_path = layout::model(cfg, kind, p_in);
    save_model(result.model, ensure_parent(model_path));
    const fs::path hist_path = layout::history(cfg, kind, p_in);
    write_history_csv(result.history, hist_path);
    json meta = provenance(cfg, "train");
    meta["kind"] = to_string(kind);
    meta["p_in"] = p_in;
    meta["steps"] = result.history.steps;
    meta["model_checksum"] = hex(result.history.final_checksum);
    if (result.history.final_holdout_mse) meta["final_holdout_mse"] = *result.history.final_holdout_mse;
    write_json(meta, layout::sidecar(hist_path));
    log << "wrote " << model_path.string() << " (" << result.history.steps << " steps";
    if (result.history.final_holdout_mse) log << ", held-out mse " << *result.history.final_holdout_mse;
    log << ")\n";
  }
}

EvalReport run_eval(const RunConfig& cfg, PolicyKind kind, std::ostream& log) {
  cfg.validate();
  std::map<double, MlpModel> models;
  for (double p_in : cfg.sweep) {
    const fs::path path = layout::model(cfg, kind, p_in);
    require_file(path, "model", "train");
    models.emplace(p_in, load_model(path, cfg.dims()));
  }
  const auto solve_ensemble = sample_ensemble(cfg.train_distribution(), cfg.n_train);
  const auto test = sample_ensemble(cfg.test_distribution(), cfg.n_test);
  EvalReport report = sweep(models, kind, cfg.system, cfg.sweep, solve_ensemble, test, cfg.eval_options());
  report.config = provenance(cfg, "eval");

  const fs::path csv = layout::report_csv(cfg, kind);
  write_report_csv(report, ensure_parent(csv));
  write_report_json(report, layout::report_json(cfg, kind));
  log << "wrote " << csv.string() << " (" << report.rows.size() << " rows)\n";
  for (const auto& r : report.rows) {
    if (r.constraint_flag) {
      log << "note: network policy at p_in=" << r.p_in << " exceeds a budget by more than 5% (E[P]="
          << r.avg_power_dnn << ", E[g_sp P]=" << r.avg_interference_dnn << ")\n";
    }
  }
  return report;
}

void run_bench(const RunConfig& cfg, PolicyKind kind, std::ostream& log) {
  cfg.validate();
  const auto solve_ensemble = sample_ensemble(cfg.train_distribution(), cfg.n_train);
  const auto test = sample_ensemble(cfg.test_distribution(), cfg.n_test);
  const fs::path path = layout::bench_csv(cfg, kind);
  std::ofstream out(ensure_parent(path), std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out.precision(9);
  out << "p_in,time_conv_s,time_dnn_s,time_ratio,conv_min_s,conv_max_s,dnn_min_s,dnn_max_s,dnn_repeat,"
         "dual_iterations\n";
  for (double p_in : cfg.sweep) {
    const fs::path model_path = layout::model(cfg, kind, p_in);
    require_file(model_path, "model", "train");
    const MlpModel model = load_model(model_path, cfg.dims());
    const auto t = time_policies(model, kind, cfg.params_at(p_in), solve_ensemble, test, cfg.solver,
                                 cfg.repetitions);
    const auto [cmin, cmax] = std::minmax_element(t.conventional_samples.begin(), t.conventional_samples.end());
    const auto [dmin, dmax] = std::minmax_element(t.dnn_samples.begin(), t.dnn_samples.end());
    out << p_in << ',' << t.conventional_s << ',' << t.dnn_s << ',' << t.dnn_s / t.conventional_s << ','
        << *cmin << ',' << *cmax << ',' << *dmin << ',' << *dmax << ',' << t.dnn_repeat << ','
        << t.solve_report.dual_iterations << '\n';
  }
  if (!out) fail(ErrorCode::io_failure, "failed writing '" + path.string() + "'");
  json meta = provenance(cfg, "bench");
  meta["kind"] = to_string(kind);
  meta["environment"] = environment_description();
  write_json(meta, layout::sidecar(path));
  log << "wrote " << path.string() << "\n";
}

void run_curves(const RunConfig& cfg, PolicyKind kind, int sample_every, std::ostream& log) {
  cfg.validate();
  for (double p_in : cfg.sweep) {
    const fs::path hist_path = layout::history(cfg, kind, p_in);
    require_file(hist_path, "training history", "train");
    const auto rows = training_curves(read_history_csv(hist_path), sample_every);
    const fs::path path = layout::curves(cfg, kind, p_in);
    write_curves_csv(rows, ensure_parent(path));
    json meta = provenance(cfg, "curves");
    meta["kind"] = to_string(kind);
    meta["p_in"] = p_in;
    meta["sample_every"] = sample_every;
    write_json(meta, layout::sidecar(path));
    log << "wrote " << path.string() << " (" << rows.size() << " rows)\n";
  }
}

}  // namespace crdnn
