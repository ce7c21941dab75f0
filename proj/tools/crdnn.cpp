// crdnn: sample -> solve -> gen -> train -> eval -> bench from one binary.
//
// Exit codes: 0 ok, 1 other failure, 2 invalid configuration or usage,
// 3 solver did not converge, 4 a prerequisite file is missing.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crdnn/channel_sim.hpp"
#include "crdnn/error.hpp"
#include "crdnn/kernels.hpp"
#include "crdnn/pipeline.hpp"

namespace {

using namespace crdnn;

struct Overrides {
  std::optional<std::string> config;
  std::optional<double> p_p, noise_var, zeta, p_c, p_th, p_in;
  std::optional<double> mean_ss, mean_sp, mean_ps;
  std::optional<double> step_size, dual_tol, dinkelbach_tol, initial_tau, initial_mu;
  std::optional<int> max_dual_iters, max_dinkelbach_iters;
  std::optional<bool> diminishing_step;
  std::optional<int> batch_size, epochs, eval_every, holdout_every, decay_every_epochs;
  std::optional<double> learning_rate, lr_decay;
  std::optional<std::vector<int>> hidden;
  std::optional<std::size_t> n_train, n_test;
  std::optional<std::vector<double>> sweep;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, repetitions;
  std::optional<bool> posthoc_scaling;
};

void add_config_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run configuration (flags override it)")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Master seed; ensemble, init and shuffle seeds derive from it");
  app->add_option("--out", o.out, "Output directory (default: out)");
  app->add_option("--threads", o.threads, "Worker thread cap (0: runtime default)");

  auto* sys = "System";
  app->add_option("--p-p", o.p_p, "Primary transmit power P_p, W (default 0.06)")->group(sys);
  app->add_option("--noise-var", o.noise_var, "Noise variance, W (default 0.01)")->group(sys);
  app->add_option("--zeta", o.zeta, "Amplifier inefficiency (default 0.2)")->group(sys);
  app->add_option("--p-c", o.p_c, "Circuit power, W (default 0.05)")->group(sys);
  app->add_option("--p-th", o.p_th, "Average transmit power budget, W (default 0.1)")->group(sys);
  app->add_option("--p-in", o.p_in,
                  "Average interference budget, W (default 0.06); for sweeping stages it replaces the sweep "
                  "with this single point")
      ->group(sys);

  auto* ch = "Channel";
  app->add_option("--mean-ss", o.mean_ss, "Mean secondary-link gain (default 1)")->group(ch);
  app->add_option("--mean-sp", o.mean_sp, "Mean CBS-to-primary gain (default 0.5)")->group(ch);
  app->add_option("--mean-ps", o.mean_ps, "Mean PBS-to-secondary gain (default 0.5)")->group(ch);

  auto* sol = "Solver";
  app->add_option("--step-size", o.step_size, "Dual subgradient step (default 0.1)")->group(sol);
  app->add_option("--max-dual-iters", o.max_dual_iters, "Dual iteration cap (default 200000)")->group(sol);
  app->add_option("--dual-tol", o.dual_tol, "Relative constraint residual tolerance (default 1e-3)")->group(sol);
  app->add_option("--dinkelbach-tol", o.dinkelbach_tol, "Dinkelbach stop threshold on F(eta) (default 1e-6)")
      ->group(sol);
  app->add_option("--max-dinkelbach-iters", o.max_dinkelbach_iters, "Dinkelbach iteration cap (default 100)")
      ->group(sol);
  app->add_option("--diminishing-step", o.diminishing_step, "Use step/sqrt(k) (default false)")->group(sol);
  app->add_option("--initial-tau", o.initial_tau, "Starting power multiplier (default 1)")->group(sol);
  app->add_option("--initial-mu", o.initial_mu, "Starting interference multiplier (default 1)")->group(sol);

  auto* tr = "Training";
  app->add_option("--batch-size", o.batch_size, "Mini-batch size M (default 128)")->group(tr);
  app->add_option("--learning-rate", o.learning_rate, "Gradient step (default 1e-3)")->group(tr);
  app->add_option("--epochs", o.epochs, "Passes over the dataset (default 20)")->group(tr);
  app->add_option("--eval-every", o.eval_every, "Steps between history points (default 1)")->group(tr);
  app->add_option("--holdout-every", o.holdout_every, "Steps between held-out MSE points (default 500)")->group(tr);
  app->add_option("--lr-decay", o.lr_decay, "Rate multiplier applied every --decay-every-epochs (default 1)")
      ->group(tr);
  app->add_option("--decay-every-epochs", o.decay_every_epochs, "0 disables decay (default 0)")->group(tr);
  app->add_option("--hidden", o.hidden, "Hidden layer widths, comma separated (default 200,200,200)")
      ->delimiter(',')
      ->group(tr);

  auto* run = "Run";
  app->add_option("--n-train", o.n_train, "Training / solve ensemble size (default 100000)")->group(run);
  app->add_option("--n-test", o.n_test, "Test ensemble size (default 1000)")->group(run);
  app->add_option("--sweep", o.sweep, "Interference budgets, strictly increasing (default 0.01,...,0.06)")
      ->delimiter(',')
      ->group(run);
  app->add_option("--repetitions", o.repetitions, "Timed runs after one warmup (default 5)")->group(run);
  app->add_option("--posthoc-scaling", o.posthoc_scaling,
                  "Scale network powers back inside both budgets before scoring (default false)")
      ->group(run);
}

template <class T, class U>
void set_if(const std::optional<T>& src, U& dst) {
  if (src) dst = *src;
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config ? load_config(*o.config) : RunConfig{};
  set_if(o.p_p, c.system.p_p);
  set_if(o.noise_var, c.system.noise_var);
  set_if(o.zeta, c.system.zeta);
  set_if(o.p_c, c.system.p_c);
  set_if(o.p_th, c.system.p_th);
  if (o.p_in) {
    c.system.p_in = *o.p_in;
    c.sweep = {*o.p_in};
  }
  set_if(o.mean_ss, c.channel.mean_ss);
  set_if(o.mean_sp, c.channel.mean_sp);
  set_if(o.mean_ps, c.channel.mean_ps);
  set_if(o.step_size, c.solver.step_size);
  set_if(o.max_dual_iters, c.solver.max_dual_iters);
  set_if(o.dual_tol, c.solver.dual_tol);
  set_if(o.dinkelbach_tol, c.solver.dinkelbach_tol);
  set_if(o.max_dinkelbach_iters, c.solver.max_dinkelbach_iters);
  set_if(o.diminishing_step, c.solver.diminishing_step);
  set_if(o.initial_tau, c.solver.initial_tau);
  set_if(o.initial_mu, c.solver.initial_mu);
  set_if(o.batch_size, c.train.batch_size);
  set_if(o.learning_rate, c.train.learning_rate);
  set_if(o.epochs, c.train.epochs);
  set_if(o.eval_every, c.train.eval_every);
  set_if(o.holdout_every, c.train.holdout_every);
  set_if(o.lr_decay, c.train.lr_decay);
  set_if(o.decay_every_epochs, c.train.decay_every_epochs);
  set_if(o.hidden, c.hidden);
  set_if(o.n_train, c.n_train);
  set_if(o.n_test, c.n_test);
  set_if(o.sweep, c.sweep);
  if (o.out) c.out = *o.out;
  set_if(o.seed, c.seed);
  set_if(o.threads, c.threads);
  set_if(o.repetitions, c.repetitions);
  set_if(o.posthoc_scaling, c.posthoc_scaling);
  c.validate();
  if (c.threads > 0) kernels::set_threads(c.threads);
  return c;
}

std::vector<PolicyKind> kinds_of(const std::string& text) {
  if (text == "both") return {PolicyKind::se, PolicyKind::ee};
  return {parse_policy_kind(text)};
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::config_mismatch:
    case ErrorCode::unbounded_water_level:
      return 2;
    case ErrorCode::non_convergence:
      return 3;
    case ErrorCode::missing_prerequisite:
      return 4;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-control oracle, network imitation and benchmark pipeline for an underlay cognitive-radio link"};
  app.require_subcommand(1);
  Overrides o;
  std::string kind = "both";
  std::string solve_kind = "se";
  std::string format = "bin";
  std::string json_out;
  int sample_every = 1000;

  auto* solve_cmd = app.add_subcommand("solve", "Solve the duals on the seeded training ensemble and print a JSON report");
  add_config_flags(solve_cmd, o);
  solve_cmd->add_option("--kind", solve_kind, "se or ee")->check(CLI::IsMember({"se", "ee"}));
  solve_cmd->add_option("--json-out", json_out, "Also write the report to this file");

  auto* gen_cmd = app.add_subcommand("gen", "Generate one labeled dataset per sweep point");
  add_config_flags(gen_cmd, o);
  gen_cmd->add_option("--kind", kind, "se, ee or both")->check(CLI::IsMember({"se", "ee", "both"}));
  gen_cmd->add_option("--format", format, "bin, or csv to also write a CSV copy")
      ->check(CLI::IsMember({"bin", "csv"}));

  auto* train_cmd = app.add_subcommand("train", "Train one network per sweep point (needs gen)");
  add_config_flags(train_cmd, o);
  train_cmd->add_option("--kind", kind, "se, ee or both")->check(CLI::IsMember({"se", "ee", "both"}));

  auto* eval_cmd = app.add_subcommand("eval", "Compare networks against the conventional solver (needs train)");
  add_config_flags(eval_cmd, o);
  eval_cmd->add_option("--kind", kind, "se, ee or both")->check(CLI::IsMember({"se", "ee", "both"}));

  auto* bench_cmd = app.add_subcommand("bench", "Time both policies at every sweep point (needs train)");
  add_config_flags(bench_cmd, o);
  bench_cmd->add_option("--kind", kind, "se, ee or both")->check(CLI::IsMember({"se", "ee", "both"}));

  auto* curves_cmd = app.add_subcommand("curves", "Subsample training histories for plotting (needs train)");
  add_config_flags(curves_cmd, o);
  curves_cmd->add_option("--kind", kind, "se, ee or both")->check(CLI::IsMember({"se", "ee", "both"}));
  curves_cmd->add_option("--sample-every", sample_every, "Keep every k-th history point (default 1000)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig cfg = resolve(o);
    if (solve_cmd->parsed()) {
      const PolicyKind k = parse_policy_kind(solve_kind);
      const SolveReport report = run_solve(cfg, k);
      const auto j = report_to_json(report, cfg);
      std::cout << j.dump(2) << '\n';
      if (!json_out.empty()) write_json(j, json_out);
      if (!report.converged) {
        std::cerr << "error: " << to_string(k) << " solve did not converge after " << report.dual_iterations
                  << " dual iterations (power residual " << report.power_residual << ", interference residual "
                  << report.interference_residual << ")\n";
        return 3;
      }
      return 0;
    }
    for (PolicyKind k : kinds_of(kind)) {
      if (gen_cmd->parsed()) run_gen(cfg, k, format == "csv", std::cout);
      if (train_cmd->parsed()) run_train(cfg, k, std::cout);
      if (eval_cmd->parsed()) run_eval(cfg, k, std::cout);
      if (bench_cmd->parsed()) run_bench(cfg, k, std::cout);
      if (curves_cmd->parsed()) run_curves(cfg, k, sample_every, std::cout);
    }
    return 0;
  } catch (const SolverFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
