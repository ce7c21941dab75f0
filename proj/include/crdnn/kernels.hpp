#pragma once

// Data-parallel ensemble kernels. Each kernel has an OpenMP version and a
// `_serial` reference. Both walk the ensemble in fixed blocks of kBlockRows
// and combine block partials by pairwise summation in block order, so the
// two versions return identical bits for any thread count.

#include <cstddef>
#include <span>
#include <vector>

#include "crdnn/core_model.hpp"

namespace crdnn::kernels {

inline constexpr std::size_t kBlockRows = 4096;

/// Structure-of-arrays copy of an ensemble with the per-row noise term
/// (h_ps P_p + sigma^2)/g_ss precomputed for one SystemParams.
struct PreparedEnsemble {
  std::vector<double> g_ss;
  std::vector<double> g_sp;
  std::vector<double> h_ps;
  std::vector<double> noise_term;
  SystemParams params;
  double min_g_sp = 0.0;
  bool any_usable = false;  // at least one row with g_ss > 0

  std::size_t size() const noexcept { return g_ss.size(); }
  ChannelRealization row(std::size_t i) const { return {g_ss[i], g_sp[i], h_ps[i]}; }
};

PreparedEnsemble prepare(std::span<const ChannelRealization> ensemble, const SystemParams& params);

/// Sums (not means) of P_i and g_sp,i P_i under the closed-form policy with
/// water-level price `price_base + mu * g_sp`.
struct ConstraintSums {
  double power = 0.0;
  double interference = 0.0;

  ConstraintSums& operator+=(const ConstraintSums& o) noexcept {
    power += o.power;
    interference += o.interference;
    return *this;
  }
};

/// First and second moments needed for ergodic metrics and their Monte
/// Carlo standard errors.
struct MetricSums {
  double power = 0.0;
  double power_sq = 0.0;
  double interference = 0.0;
  double rate = 0.0;
  double rate_sq = 0.0;
  double rate_power = 0.0;

  MetricSums& operator+=(const MetricSums& o) noexcept {
    power += o.power;
    power_sq += o.power_sq;
    interference += o.interference;
    rate += o.rate;
    rate_sq += o.rate_sq;
    rate_power += o.rate_power;
    return *this;
  }
};

ConstraintSums constraint_sums(const PreparedEnsemble& ens, double price_base, double mu);
ConstraintSums constraint_sums_serial(const PreparedEnsemble& ens, double price_base, double mu);

MetricSums policy_metric_sums(const PreparedEnsemble& ens, double price_base, double mu);
MetricSums policy_metric_sums_serial(const PreparedEnsemble& ens, double price_base, double mu);

/// Metrics for an arbitrary per-row power vector (e.g. network outputs).
MetricSums power_metric_sums(const PreparedEnsemble& ens, std::span<const double> powers);
MetricSums power_metric_sums_serial(const PreparedEnsemble& ens, std::span<const double> powers);

/// Writes the closed-form power of every row into `out`.
void water_fill_all(const PreparedEnsemble& ens, double price_base, double mu, std::span<double> out);
void water_fill_all_serial(const PreparedEnsemble& ens, double price_base, double mu,
                           std::span<double> out);

int max_threads() noexcept;
void set_threads(int n) noexcept;

/// Restores the previous OpenMP thread count on scope exit.
class ScopedThreads {
 public:
  explicit ScopedThreads(int n) noexcept : saved_(max_threads()) { set_threads(n); }
  ~ScopedThreads() { set_threads(saved_); }
  ScopedThreads(const ScopedThreads&) = delete;
  ScopedThreads& operator=(const ScopedThreads&) = delete;

 private:
  int saved_;
};

}  // namespace crdnn::kernels
