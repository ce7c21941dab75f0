#pragma once

// Link model of an underlay cognitive-radio pair: one primary transmitter
// (PBS) talking to its user, one secondary transmitter (CBS) that must keep
// its average transmit power and the average interference it causes at the
// primary user under budget. Everything here is a pure function.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

namespace crdnn {

struct SystemParams {
  double p_p = 0.06;        // primary transmit power (W)
  double noise_var = 0.01;  // noise variance at the secondary receiver (W)
  double zeta = 0.2;        // amplifier inefficiency
  double p_c = 0.05;        // circuit power (W)
  double p_th = 0.1;        // average transmit power budget (W)
  double p_in = 0.06;       // average interference budget (W)

  /// Throws Error(invalid_argument) naming the first violated bound.
  void validate() const;

  bool operator==(const SystemParams&) const = default;
};

/// One block-fading draw of the three channel power gains.
struct ChannelRealization {
  double g_ss = 0.0;  // secondary link
  double g_sp = 0.0;  // CBS -> primary user
  double h_ps = 0.0;  // PBS -> secondary user

  void validate() const;

  bool operator==(const ChannelRealization&) const = default;
};

/// Lagrange multipliers of the power (tau) and interference (mu) budgets,
/// plus the Dinkelbach price of consumed power (eta, zero for SE).
struct DualState {
  double tau = 0.0;
  double mu = 0.0;
  double eta = 0.0;

  void validate() const;

  bool operator==(const DualState&) const = default;
};

enum class PolicyKind : std::uint8_t { se = 0, ee = 1 };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& text);

// Unchecked building blocks shared by the scalar API and the ensemble
// kernels. Keeping a single definition keeps the two paths bit-identical.
namespace detail {

inline constexpr double kLn2 = std::numbers::ln2;

/// (h_ps P_p + sigma^2) / g_ss, +inf when g_ss == 0.
inline double noise_over_gain(double g_ss, double h_ps, const SystemParams& params) noexcept {
  if (g_ss <= 0.0) return std::numeric_limits<double>::infinity();
  return (h_ps * params.p_p + params.noise_var) / g_ss;
}

/// [1/(price ln 2) - noise_over_gain]^+ with price = eta*zeta + tau + mu*g_sp
/// already folded into `price_base + mu * g_sp`.
inline double water_fill(double price_base, double mu, double g_sp, double noise_term) noexcept {
  const double price = price_base + mu * g_sp;
  const double level = 1.0 / (price * kLn2);
  const double p = level - noise_term;
  return p > 0.0 ? p : 0.0;
}

inline double rate(double p, double g_ss, double h_ps, const SystemParams& params) noexcept {
  return std::log2(1.0 + g_ss * p / (h_ps * params.p_p + params.noise_var));
}

inline double price_base(const DualState& duals, const SystemParams& params) noexcept {
  return duals.eta * params.zeta + duals.tau;
}

}  // namespace detail

/// log2(1 + g_ss p / (h_ps P_p + sigma^2)), bits/s/Hz.
double instantaneous_rate(double p, const ChannelRealization& ch, const SystemParams& params);

/// Spectral-efficiency water-filling power. `duals.eta` is ignored.
/// Throws unbounded_water_level when tau + mu*g_sp == 0.
double power_se(const ChannelRealization& ch, const DualState& duals, const SystemParams& params);

/// Energy-efficiency power: water level shrinks by the consumed-power price
/// eta*zeta. Equals power_se bit for bit when eta == 0.
double power_ee(const ChannelRealization& ch, const DualState& duals, const SystemParams& params);

/// zeta p + P_C, W.
double power_cost(double p, const SystemParams& params);

/// Dispatches to power_se or power_ee.
double closed_form_power(PolicyKind kind, const ChannelRealization& ch, const DualState& duals,
                         const SystemParams& params);

}  // namespace crdnn
