#pragma once

// Conventional (solver-based) power allocation over a sample-average
// approximation of the fading distribution: projected dual subgradient for
// the spectral-efficiency problem, Dinkelbach around it for energy
// efficiency, and an exhaustive grid search used to cross-check both.

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "crdnn/core_model.hpp"
#include "crdnn/kernels.hpp"

namespace crdnn {

struct SolverOptions {
  double step_size = 0.1;
  int max_dual_iters = 200000;
  double dual_tol = 1e-3;
  double dinkelbach_tol = 1e-6;
  int max_dinkelbach_iters = 100;
  bool diminishing_step = false;  // alpha / sqrt(k) instead of a fixed step
  double initial_tau = 1.0;
  double initial_mu = 1.0;

  void validate() const;
};

/// Sample means of the quantities the two objectives are built from.
struct EnsembleMetrics {
  std::size_t n = 0;
  double avg_power = 0.0;
  double avg_interference = 0.0;
  double ergodic_rate = 0.0;
  double avg_cost = 0.0;
  double ee = 0.0;
  double rate_std_error = 0.0;  // Monte Carlo standard error of ergodic_rate
  double ee_std_error = 0.0;    // delta-method standard error of ee
};

struct SolveReport {
  PolicyKind kind = PolicyKind::se;
  DualState duals;
  int dual_iterations = 0;         // total over all inner solves
  int dinkelbach_iterations = 0;   // 0 for SE
  EnsembleMetrics metrics;
  bool converged = false;
  double power_residual = 0.0;         // (E[P] - p_th) / p_th at the last iterate
  double interference_residual = 0.0;  // (E[g_sp P] - p_in) / p_in
  std::vector<double> eta_history;     // Dinkelbach iterates eta_0, eta_1, ...
};

/// (E[P], E[g_sp P]) under the closed-form policy for `kind`.
std::pair<double, double> estimate_constraints(std::span<const ChannelRealization> ensemble,
                                               const DualState& duals, PolicyKind kind,
                                               const SystemParams& params);

SolveReport solve_se_duals(std::span<const ChannelRealization> ensemble, const SystemParams& params,
                           const SolverOptions& opts);
SolveReport solve_se_duals(const kernels::PreparedEnsemble& ensemble, const SolverOptions& opts);

SolveReport solve_ee(std::span<const ChannelRealization> ensemble, const SystemParams& params,
                     const SolverOptions& opts);
SolveReport solve_ee(const kernels::PreparedEnsemble& ensemble, const SolverOptions& opts);

SolveReport solve(PolicyKind kind, const kernels::PreparedEnsemble& ensemble,
                  const SolverOptions& opts);

struct GridSpec {
  int points = 200;      // per axis, including 0 on the first round
  int refinements = 2;   // extra rounds around the incumbent
  double max_evaluations = 5e9;  // guard against accidental huge searches
};

struct BruteForceResult {
  std::vector<double> powers;
  double objective = 0.0;  // mean rate (SE) or mean rate / mean cost (EE)
};

/// Exhaustive search over a product grid of per-realization powers subject
/// to the two sample-average budgets. Only for tiny ensembles (<= 6 rows).
BruteForceResult brute_force_small(std::span<const ChannelRealization> ensemble,
                                   const SystemParams& params, PolicyKind kind,
                                   const GridSpec& grid = {});

using PowerPolicy = std::function<double(const ChannelRealization&)>;

/// Ergodic metrics of any policy on an ensemble. The policy is called
/// concurrently and must be pure.
EnsembleMetrics ergodic_metrics(std::span<const ChannelRealization> ensemble,
                                const PowerPolicy& policy, const SystemParams& params);

/// Same, for precomputed per-row powers.
EnsembleMetrics metrics_from_powers(const kernels::PreparedEnsemble& ensemble,
                                    std::span<const double> powers);

EnsembleMetrics metrics_from_sums(const kernels::MetricSums& sums, std::size_t n,
                                  const SystemParams& params);

}  // namespace crdnn
