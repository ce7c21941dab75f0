#include "crdnn/core_model.hpp"

#include <sstream>

#include "crdnn/error.hpp"

namespace crdnn {

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << name << " must be finite (got " << v << ")";
    fail(ErrorCode::invalid_argument, os.str());
  }
}

void require_bound(bool ok, const char* name, const char* bound, double v) {
  if (!ok) {
    std::ostringstream os;
    os << name << " must be " << bound << " (got " << v << ")";
    fail(ErrorCode::invalid_argument, os.str());
  }
}

double checked_power(const ChannelRealization& ch, const DualState& duals,
                     const SystemParams& params) {
  ch.validate();
  duals.validate();
  const double base = detail::price_base(duals, params);
  if (!(base + duals.mu * ch.g_sp > 0.0)) {
    std::ostringstream os;
    os << "unbounded water level: eta*zeta + tau + mu*g_sp = 0 (tau=" << duals.tau
       << ", mu=" << duals.mu << ", eta=" << duals.eta << ", g_sp=" << ch.g_sp << ")";
    fail(ErrorCode::unbounded_water_level, os.str());
  }
  if (ch.g_ss == 0.0) return 0.0;
  return detail::water_fill(base, duals.mu, ch.g_sp,
                            detail::noise_over_gain(ch.g_ss, ch.h_ps, params));
}

}  // namespace

void SystemParams::validate() const {
  for (auto [v, name] : {std::pair{p_p, "p_p"}, {noise_var, "noise_var"}, {zeta, "zeta"},
                         {p_c, "p_c"}, {p_th, "p_th"}, {p_in, "p_in"}}) {
    require_finite(v, name);
  }
  require_bound(p_p >= 0.0, "p_p", ">= 0", p_p);
  require_bound(noise_var > 0.0, "noise_var", "> 0", noise_var);
  // zeta = 0 is allowed: it is the fixed-cost special case where the EE and
  // SE policies coincide.
  require_bound(zeta >= 0.0, "zeta", ">= 0", zeta);
  require_bound(p_c >= 0.0, "p_c", ">= 0", p_c);
  require_bound(p_th > 0.0, "p_th", "> 0", p_th);
  require_bound(p_in > 0.0, "p_in", "> 0", p_in);
}

void ChannelRealization::validate() const {
  for (auto [v, name] : {std::pair{g_ss, "g_ss"}, {g_sp, "g_sp"}, {h_ps, "h_ps"}}) {
    require_finite(v, name);
    require_bound(v >= 0.0, name, ">= 0", v);
  }
}

void DualState::validate() const {
  for (auto [v, name] : {std::pair{tau, "tau"}, {mu, "mu"}, {eta, "eta"}}) {
    require_finite(v, name);
    require_bound(v >= 0.0, name, ">= 0", v);
  }
}

std::string to_string(PolicyKind kind) { return kind == PolicyKind::se ? "se" : "ee"; }

PolicyKind parse_policy_kind(const std::string& text) {
  if (text == "se" || text == "SE") return PolicyKind::se;
  if (text == "ee" || text == "EE") return PolicyKind::ee;
  fail(ErrorCode::invalid_argument, "unknown policy kind '" + text + "' (expected se or ee)");
}

double instantaneous_rate(double p, const ChannelRealization& ch, const SystemParams& params) {
  require_finite(p, "p");
  require_bound(p >= 0.0, "p", ">= 0", p);
  ch.validate();
  return detail::rate(p, ch.g_ss, ch.h_ps, params);
}

double power_se(const ChannelRealization& ch, const DualState& duals, const SystemParams& params) {
  return checked_power(ch, DualState{duals.tau, duals.mu, 0.0}, params);
}

double power_ee(const ChannelRealization& ch, const DualState& duals, const SystemParams& params) {
  return checked_power(ch, duals, params);
}

double power_cost(double p, const SystemParams& params) {
  require_finite(p, "p");
  require_bound(p >= 0.0, "p", ">= 0", p);
  return params.zeta * p + params.p_c;
}

double closed_form_power(PolicyKind kind, const ChannelRealization& ch, const DualState& duals,
                         const SystemParams& params) {
  return kind == PolicyKind::se ? power_se(ch, duals, params) : power_ee(ch, duals, params);
}

}  // namespace crdnn
