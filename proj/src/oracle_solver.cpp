#include "crdnn/oracle_solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "crdnn/error.hpp"

namespace crdnn {

namespace {

// Normalized residuals are clipped to this range before a subgradient step.
// The lower end is the natural floor (E[P] >= 0); the upper end keeps the
// step finite while the water level is unbounded.
constexpr double kMinResidual = -1.0;
constexpr double kMaxResidual = 10.0;

struct DualAscentResult {
  double tau = 0.0;
  double mu = 0.0;
  int iterations = 0;
  bool converged = false;
  double power_residual = 0.0;
  double interference_residual = 0.0;
};

bool slack_ok(double multiplier, double residual, double tol) {
  return multiplier > 0.0 ? std::abs(residual) <= tol : residual <= tol;
}

double clip_residual(double r) {
  if (std::isnan(r)) return kMaxResidual;
  return std::clamp(r, kMinResidual, kMaxResidual);
}

// Projected subgradient ascent on the dual of the (eta-priced) rate
// problem. Residuals are measured relative to their budgets so the step is
// dimensionless.
DualAscentResult dual_ascent(const kernels::PreparedEnsemble& ens, double eta, double tau, double mu,
                             const SolverOptions& opts) {
  const SystemParams& params = ens.params;
  const double n = static_cast<double>(ens.size());
  DualAscentResult out;
  for (int k = 1; k <= opts.max_dual_iters; ++k) {
    const double base = eta * params.zeta + tau;
    double r_power = kMaxResidual;
    double r_interf = kMaxResidual;
    if (base + mu * ens.min_g_sp > 0.0) {
      const auto sums = kernels::constraint_sums(ens, base, mu);
      r_power = sums.power / n / params.p_th - 1.0;
      r_interf = sums.interference / n / params.p_in - 1.0;
    }
    out.iterations = k;
    out.power_residual = r_power;
    out.interference_residual = r_interf;
    if (slack_ok(tau, r_power, opts.dual_tol) && slack_ok(mu, r_interf, opts.dual_tol)) {
      out.converged = true;
      break;
    }
    const double step = opts.diminishing_step ? opts.step_size / std::sqrt(static_cast<double>(k))
                                              : opts.step_size;
    tau = std::max(0.0, tau + step * clip_residual(r_power));
    mu = std::max(0.0, mu + step * clip_residual(r_interf));
  }
  out.tau = tau;
  out.mu = mu;
  return out;
}

void check_ensemble(const kernels::PreparedEnsemble& ens) {
  if (ens.size() == 0) fail(ErrorCode::invalid_argument, "ensemble is empty");
  if (!ens.any_usable) {
    fail(ErrorCode::degenerate_ensemble, "every realization has g_ss = 0; no rate is achievable");
  }
}

EnsembleMetrics policy_metrics(const kernels::PreparedEnsemble& ens, const DualState& duals) {
  const auto sums =
      kernels::policy_metric_sums(ens, detail::price_base(duals, ens.params), duals.mu);
  return metrics_from_sums(sums, ens.size(), ens.params);
}

}  // namespace

void SolverOptions::validate() const {
  require(step_size > 0.0 && std::isfinite(step_size), "step_size must be > 0");
  require(dual_tol > 0.0, "dual_tol must be > 0");
  require(dinkelbach_tol > 0.0, "dinkelbach_tol must be > 0");
  require(max_dual_iters >= 1, "max_dual_iters must be >= 1");
  require(max_dinkelbach_iters >= 1, "max_dinkelbach_iters must be >= 1");
  require(initial_tau >= 0.0 && initial_mu >= 0.0, "initial multipliers must be >= 0");
}

EnsembleMetrics metrics_from_sums(const kernels::MetricSums& sums, std::size_t n,
                                  const SystemParams& params) {
  EnsembleMetrics m;
  m.n = n;
  if (n == 0) return m;
  const double nd = static_cast<double>(n);
  m.avg_power = sums.power / nd;
  m.avg_interference = sums.interference / nd;
  m.ergodic_rate = sums.rate / nd;
  m.avg_cost = params.zeta * m.avg_power + params.p_c;
  m.ee = m.avg_cost > 0.0 ? m.ergodic_rate / m.avg_cost : 0.0;
  if (n > 1) {
    const double bessel = nd / (nd - 1.0);
    const double var_r = std::max(0.0, (sums.rate_sq / nd - m.ergodic_rate * m.ergodic_rate) * bessel);
    const double var_p = std::max(0.0, (sums.power_sq / nd - m.avg_power * m.avg_power) * bessel);
    const double cov_rp = (sums.rate_power / nd - m.ergodic_rate * m.avg_power) * bessel;
    m.rate_std_error = std::sqrt(var_r / nd);
    if (m.avg_cost > 0.0) {
      // Linearization of R/C around the sample means: Var(r - ee * zeta * p).
      const double k = m.ee * params.zeta;
      const double var_d = std::max(0.0, var_r + k * k * var_p - 2.0 * k * cov_rp);
      m.ee_std_error = std::sqrt(var_d / nd) / m.avg_cost;
    }
  }
  return m;
}

std::pair<double, double> estimate_constraints(std::span<const ChannelRealization> ensemble,
                                               const DualState& duals, PolicyKind kind,
                                               const SystemParams& params) {
  require(!ensemble.empty(), "estimate_constraints: ensemble is empty");
  duals.validate();
  const auto ens = kernels::prepare(ensemble, params);
  const double eta = kind == PolicyKind::se ? 0.0 : duals.eta;
  const double base = eta * params.zeta + duals.tau;
  if (!(base + duals.mu * ens.min_g_sp > 0.0)) {
    fail(ErrorCode::unbounded_water_level,
         "estimate_constraints: water level is unbounded for at least one realization");
  }
  const auto sums = kernels::constraint_sums(ens, base, duals.mu);
  const double n = static_cast<double>(ens.size());
  return {sums.power / n, sums.interference / n};
}

SolveReport solve_se_duals(const kernels::PreparedEnsemble& ens, const SolverOptions& opts) {
  opts.validate();
  check_ensemble(ens);
  const auto inner = dual_ascent(ens, 0.0, opts.initial_tau, opts.initial_mu, opts);
  SolveReport report;
  report.kind = PolicyKind::se;
  report.duals = {inner.tau, inner.mu, 0.0};
  report.dual_iterations = inner.iterations;
  report.converged = inner.converged;
  report.power_residual = inner.power_residual;
  report.interference_residual = inner.interference_residual;
  report.metrics = policy_metrics(ens, report.duals);
  return report;
}

SolveReport solve_se_duals(std::span<const ChannelRealization> ensemble, const SystemParams& params,
                           const SolverOptions& opts) {
  return solve_se_duals(kernels::prepare(ensemble, params), opts);
}

SolveReport solve_ee(const kernels::PreparedEnsemble& ens, const SolverOptions& opts) {
  opts.validate();
  check_ensemble(ens);
  const SystemParams& params = ens.params;
  if (!(params.p_c > 0.0 || params.zeta > 0.0)) {
    fail(ErrorCode::invalid_argument, "solve_ee: consumed power is zero (need p_c > 0 or zeta > 0)");
  }
  SolveReport report;
  report.kind = PolicyKind::ee;
  double eta = 0.0;
  double tau = opts.initial_tau;
  double mu = opts.initial_mu;
  for (int k = 0; k < opts.max_dinkelbach_iters; ++k) {
    // Multipliers are warm-started from the previous outer iteration.
    const auto inner = dual_ascent(ens, eta, tau, mu, opts);
    tau = inner.tau;
    mu = inner.mu;
    report.dual_iterations += inner.iterations;
    report.dinkelbach_iterations = k + 1;
    report.power_residual = inner.power_residual;
    report.interference_residual = inner.interference_residual;
    report.duals = {tau, mu, eta};
    report.metrics = policy_metrics(ens, report.duals);
    report.eta_history.push_back(eta);
    if (!inner.converged) return report;

    const double f = report.metrics.ergodic_rate - eta * report.metrics.avg_cost;
    if (f < opts.dinkelbach_tol) {
      report.converged = true;
      return report;
    }
    eta = report.metrics.ergodic_rate / report.metrics.avg_cost;
  }
  return report;
}

SolveReport solve_ee(std::span<const ChannelRealization> ensemble, const SystemParams& params,
                     const SolverOptions& opts) {
  return solve_ee(kernels::prepare(ensemble, params), opts);
}

SolveReport solve(PolicyKind kind, const kernels::PreparedEnsemble& ensemble,
                  const SolverOptions& opts) {
  return kind == PolicyKind::se ? solve_se_duals(ensemble, opts) : solve_ee(ensemble, opts);
}

EnsembleMetrics metrics_from_powers(const kernels::PreparedEnsemble& ensemble,
                                    std::span<const double> powers) {
  for (double p : powers) {
    if (!std::isfinite(p) || p < 0.0) {
      std::ostringstream os;
      os << "policy produced an invalid power " << p;
      fail(ErrorCode::invalid_argument, os.str());
    }
  }
  return metrics_from_sums(kernels::power_metric_sums(ensemble, powers), ensemble.size(),
                           ensemble.params);
}

EnsembleMetrics ergodic_metrics(std::span<const ChannelRealization> ensemble,
                                const PowerPolicy& policy, const SystemParams& params) {
  require(!ensemble.empty(), "ergodic_metrics: ensemble is empty");
  const auto ens = kernels::prepare(ensemble, params);
  std::vector<double> powers(ens.size());
  std::atomic<bool> failed{false};
  const auto n = static_cast<std::int64_t>(ens.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      powers[static_cast<std::size_t>(i)] = policy(ensemble[static_cast<std::size_t>(i)]);
    } catch (...) {
      failed = true;
    }
  }
  if (failed) fail(ErrorCode::invalid_argument, "ergodic_metrics: policy threw on some realization");
  return metrics_from_powers(ens, powers);
}

// ---------------------------------------------------------------------------
// Exhaustive grid search.

namespace {

struct Axis {
  std::vector<double> value;
  std::vector<double> rate;
};

class GridSearch {
 public:
  GridSearch(std::span<const ChannelRealization> ens, const SystemParams& params, PolicyKind kind)
      : ens_(ens), params_(params), kind_(kind), n_(static_cast<double>(ens.size())) {
    power_budget_ = n_ * params.p_th;
    interf_budget_ = n_ * params.p_in;
  }

  double upper_bound(std::size_t i) const {
    const double g = ens_[i].g_sp;
    return g > 0.0 ? std::min(power_budget_, interf_budget_ / g) : power_budget_;
  }

  Axis make_axis(std::size_t i, double lo, double hi, int points) const {
    Axis a;
    a.value.resize(static_cast<std::size_t>(points));
    a.rate.resize(static_cast<std::size_t>(points));
    for (int j = 0; j < points; ++j) {
      const double v = j == points - 1 ? hi : lo + (hi - lo) * j / (points - 1);
      a.value[static_cast<std::size_t>(j)] = v;
      a.rate[static_cast<std::size_t>(j)] = detail::rate(v, ens_[i].g_ss, ens_[i].h_ps, params_);
    }
    return a;
  }

  double objective(double sum_rate, double sum_power) const {
    if (kind_ == PolicyKind::se) return sum_rate / n_;
    const double cost = n_ * params_.p_c + params_.zeta * sum_power;
    return cost > 0.0 ? sum_rate / cost : 0.0;
  }

  bool feasible(double sum_power, double sum_interf) const {
    constexpr double kSlack = 1e-12;
    return sum_power <= power_budget_ * (1.0 + kSlack) && sum_interf <= interf_budget_ * (1.0 + kSlack);
  }

  void search(const std::vector<Axis>& axes) {
    chosen_.assign(axes.size(), 0);
    recurse(axes, 0, 0.0, 0.0, 0.0);
  }

  bool found = false;
  double best_objective = 0.0;
  std::vector<double> best_powers;

 private:
  void recurse(const std::vector<Axis>& axes, std::size_t depth, double s_rate, double s_power,
               double s_interf) {
    const double g = ens_[depth].g_sp;
    const Axis& axis = axes[depth];
    const std::size_t m = axis.value.size();
    if (depth + 1 == axes.size()) {
      finish_last_axis(axes, s_rate, s_power, s_interf);
      return;
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double p = axis.value[j];
      const double sp = s_power + p;
      const double si = s_interf + g * p;
      // Values are ascending and nonnegative: once infeasible, stays so.
      if (!feasible(sp, si)) break;
      chosen_[depth] = j;
      recurse(axes, depth + 1, s_rate + axis.rate[j], sp, si);
    }
  }

  void finish_last_axis(const std::vector<Axis>& axes, double s_rate, double s_power, double s_interf) {
    const std::size_t last = axes.size() - 1;
    const Axis& axis = axes[last];
    const double g = ens_[last].g_sp;
    auto ok = [&](std::size_t j) { return feasible(s_power + axis.value[j], s_interf + g * axis.value[j]); };
    if (!ok(0)) return;
    // Largest feasible index; feasibility is monotone along the axis.
    std::size_t lo = 0;
    std::size_t hi = axis.value.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (ok(mid)) lo = mid; else hi = mid - 1;
    }
    const std::size_t j_max = lo;
    auto f = [&](std::size_t j) { return objective(s_rate + axis.rate[j], s_power + axis.value[j]); };
    std::size_t j_best = j_max;
    if (kind_ == PolicyKind::ee) {
      // Concave-over-affine along one axis is unimodal: binary search on the
      // sign of the forward difference.
      std::size_t a = 0;
      std::size_t b = j_max;
      while (a < b) {
        const std::size_t mid = (a + b) / 2;
        if (f(mid + 1) > f(mid)) a = mid + 1; else b = mid;
      }
      j_best = a;
    }
    const double value = f(j_best);
    if (!found || value > best_objective) {
      found = true;
      best_objective = value;
      best_powers.resize(axes.size());
      for (std::size_t d = 0; d < last; ++d) best_powers[d] = axes[d].value[chosen_[d]];
      best_powers[last] = axis.value[j_best];
    }
  }

  std::span<const ChannelRealization> ens_;
  SystemParams params_;
  PolicyKind kind_;
  double n_;
  double power_budget_ = 0.0;
  double interf_budget_ = 0.0;
  std::vector<std::size_t> chosen_;
};

}  // namespace

BruteForceResult brute_force_small(std::span<const ChannelRealization> ensemble,
                                   const SystemParams& params, PolicyKind kind, const GridSpec& grid) {
  params.validate();
  require(!ensemble.empty() && ensemble.size() <= 6, "brute_force_small: need 1..6 realizations");
  require(grid.points >= 2, "brute_force_small: need at least 2 grid points per axis");
  require(grid.refinements >= 0, "brute_force_small: refinements must be >= 0");
  for (const auto& ch : ensemble) ch.validate();
  const double per_round = std::pow(static_cast<double>(grid.points),
                                    static_cast<double>(ensemble.size() - 1)) *
                           (1.0 + std::log2(static_cast<double>(grid.points)));
  if (per_round * (grid.refinements + 1) > grid.max_evaluations) {
    fail(ErrorCode::invalid_argument, "brute_force_small: grid too large for exhaustive search");
  }

  GridSearch search(ensemble, params, kind);
  const std::size_t n = ensemble.size();
  std::vector<Axis> axes(n);
  std::vector<double> spacing(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ub = search.upper_bound(i);
    axes[i] = search.make_axis(i, 0.0, ub, grid.points);
    spacing[i] = ub / (grid.points - 1);
  }
  search.search(axes);
  if (!search.found) fail(ErrorCode::invalid_argument, "brute_force_small: no feasible grid point");

  for (int round = 0; round < grid.refinements; ++round) {
    const std::vector<double> incumbent = search.best_powers;
    for (std::size_t i = 0; i < n; ++i) {
      const double lo = std::max(0.0, incumbent[i] - 2.0 * spacing[i]);
      const double hi = std::min(search.upper_bound(i), incumbent[i] + 2.0 * spacing[i]);
      axes[i] = search.make_axis(i, lo, hi, grid.points);
      spacing[i] = (hi - lo) / (grid.points - 1);
    }
    // The incumbent stays in `search` and is only replaced by a strictly
    // better feasible point.
    search.search(axes);
  }
  return {search.best_powers, search.best_objective};
}

}  // namespace crdnn
