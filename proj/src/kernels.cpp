#include "crdnn/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "crdnn/error.hpp"

namespace crdnn::kernels {

namespace {

std::size_t block_count(std::size_t n) { return (n + kBlockRows - 1) / kBlockRows; }

template <class Acc>
Acc pairwise(std::span<const Acc> parts) {
  if (parts.empty()) return Acc{};
  if (parts.size() == 1) return parts[0];
  const std::size_t mid = parts.size() / 2;
  Acc left = pairwise(parts.first(mid));
  left += pairwise(parts.subspan(mid));
  return left;
}

template <class Acc, class BlockFn>
Acc reduce_parallel(std::size_t n, BlockFn&& fn) {
  const std::size_t nb = block_count(n);
  std::vector<Acc> parts(nb);
  const auto nb_signed = static_cast<std::int64_t>(nb);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb_signed; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlockRows;
    parts[static_cast<std::size_t>(b)] = fn(lo, std::min(n, lo + kBlockRows));
  }
  return pairwise<Acc>(parts);
}

template <class Acc, class BlockFn>
Acc reduce_serial(std::size_t n, BlockFn&& fn) {
  const std::size_t nb = block_count(n);
  std::vector<Acc> parts(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * kBlockRows;
    parts[b] = fn(lo, std::min(n, lo + kBlockRows));
  }
  return pairwise<Acc>(parts);
}

ConstraintSums constraint_block(const PreparedEnsemble& ens, double price_base, double mu,
                                std::size_t lo, std::size_t hi) {
  const double* g_sp = ens.g_sp.data();
  const double* noise = ens.noise_term.data();
  double sp = 0.0;
  double si = 0.0;
#pragma omp simd reduction(+ : sp, si)
  for (std::size_t i = lo; i < hi; ++i) {
    const double p = detail::water_fill(price_base, mu, g_sp[i], noise[i]);
    sp += p;
    si += g_sp[i] * p;
  }
  return {sp, si};
}

MetricSums metric_row(const PreparedEnsemble& ens, std::size_t i, double p) {
  const double r = detail::rate(p, ens.g_ss[i], ens.h_ps[i], ens.params);
  return {p, p * p, ens.g_sp[i] * p, r, r * r, r * p};
}

MetricSums policy_metric_block(const PreparedEnsemble& ens, double price_base, double mu,
                               std::size_t lo, std::size_t hi) {
  MetricSums acc;
  for (std::size_t i = lo; i < hi; ++i) {
    const double p = detail::water_fill(price_base, mu, ens.g_sp[i], ens.noise_term[i]);
    acc += metric_row(ens, i, p);
  }
  return acc;
}

MetricSums power_metric_block(const PreparedEnsemble& ens, std::span<const double> powers,
                              std::size_t lo, std::size_t hi) {
  MetricSums acc;
  for (std::size_t i = lo; i < hi; ++i) acc += metric_row(ens, i, powers[i]);
  return acc;
}

void check_sizes(const PreparedEnsemble& ens, std::span<const double> v, const char* what) {
  if (v.size() != ens.size()) {
    fail(ErrorCode::shape_mismatch, std::string(what) + ": " + std::to_string(v.size()) +
                                        " values for " + std::to_string(ens.size()) + " rows");
  }
}

}  // namespace

PreparedEnsemble prepare(std::span<const ChannelRealization> ensemble, const SystemParams& params) {
  params.validate();
  PreparedEnsemble out;
  const std::size_t n = ensemble.size();
  out.params = params;
  out.g_ss.resize(n);
  out.g_sp.resize(n);
  out.h_ps.resize(n);
  out.noise_term.resize(n);
  out.min_g_sp = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ch = ensemble[i];
    ch.validate();
    out.g_ss[i] = ch.g_ss;
    out.g_sp[i] = ch.g_sp;
    out.h_ps[i] = ch.h_ps;
    out.noise_term[i] = detail::noise_over_gain(ch.g_ss, ch.h_ps, params);
    out.min_g_sp = std::min(out.min_g_sp, ch.g_sp);
    out.any_usable = out.any_usable || ch.g_ss > 0.0;
  }
  return out;
}

ConstraintSums constraint_sums(const PreparedEnsemble& ens, double price_base, double mu) {
  return reduce_parallel<ConstraintSums>(ens.size(), [&](std::size_t lo, std::size_t hi) {
    return constraint_block(ens, price_base, mu, lo, hi);
  });
}

ConstraintSums constraint_sums_serial(const PreparedEnsemble& ens, double price_base, double mu) {
  return reduce_serial<ConstraintSums>(ens.size(), [&](std::size_t lo, std::size_t hi) {
    return constraint_block(ens, price_base, mu, lo, hi);
  });
}

MetricSums policy_metric_sums(const PreparedEnsemble& ens, double price_base, double mu) {
  return reduce_parallel<MetricSums>(ens.size(), [&](std::size_t lo, std::size_t hi) {
    return policy_metric_block(ens, price_base, mu, lo, hi);
  });
}

MetricSums policy_metric_sums_serial(const PreparedEnsemble& ens, double price_base, double mu) {
  return reduce_serial<MetricSums>(ens.size(), [&](std::size_t lo, std::size_t hi) {
    return policy_metric_block(ens, price_base, mu, lo, hi);
  });
}

MetricSums power_metric_sums(const PreparedEnsemble& ens, std::span<const double> powers) {
  check_sizes(ens, powers, "power_metric_sums");
  return reduce_parallel<MetricSums>(ens.size(), [&](std::size_t lo, std::size_t hi) {
    return power_metric_block(ens, powers, lo, hi);
  });
}

MetricSums power_metric_sums_serial(const PreparedEnsemble& ens, std::span<const double> powers) {
  check_sizes(ens, powers, "power_metric_sums_serial");
  return reduce_serial<MetricSums>(ens.size(), [&](std::size_t lo, std::size_t hi) {
    return power_metric_block(ens, powers, lo, hi);
  });
}

void water_fill_all(const PreparedEnsemble& ens, double price_base, double mu, std::span<double> out) {
  check_sizes(ens, out, "water_fill_all");
  const auto n = static_cast<std::int64_t>(ens.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = detail::water_fill(price_base, mu, ens.g_sp[k], ens.noise_term[k]);
  }
}

void water_fill_all_serial(const PreparedEnsemble& ens, double price_base, double mu,
                           std::span<double> out) {
  check_sizes(ens, out, "water_fill_all_serial");
  for (std::size_t i = 0; i < ens.size(); ++i) {
    out[i] = detail::water_fill(price_base, mu, ens.g_sp[i], ens.noise_term[i]);
  }
}

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) noexcept {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace crdnn::kernels
