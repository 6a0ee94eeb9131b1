#pragma once

// Risk kernel: evaluates the forward-projected impact index
//
//   index(t+1) = a * T(t) * V(t) * E(t) / R(t) + alpha * P(t)
//
// with an explicit regime gate on resilience. Below r_min the kernel does not
// return a number at all; the result is a Collapse variant.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "ciim/json_io.hpp"

namespace ciim {

inline constexpr std::size_t kSourceCount = 4;

// Order matches PerturbationSources fields.
inline constexpr std::array<std::string_view, kSourceCount> kSourceNames{
    "d_hist", "d_real", "b_user", "a_patterns"};

using SourceWeights = std::array<double, kSourceCount>;

inline constexpr SourceWeights kDefaultSourceWeights{0.4, 0.3, 0.2, 0.1};

struct PerturbationSources {
  double d_hist = 0.0;      // historical incident pressure
  double d_real = 0.0;      // real-time threat intelligence level
  double b_user = 0.0;      // user-behaviour risk
  double a_patterns = 0.0;  // detected-anomaly level

  std::array<double, kSourceCount> as_array() const { return {d_hist, d_real, b_user, a_patterns}; }
  static PerturbationSources from_array(const std::array<double, kSourceCount>& v) {
    return {v[0], v[1], v[2], v[3]};
  }

  bool operator==(const PerturbationSources&) const = default;
};

struct RiskState {
  std::uint64_t t = 0;
  double threat = 0.0;
  double vulnerability = 0.0;
  double exposure = 0.0;
  double resilience = 1.0;  // (0, 1]
  PerturbationSources sources;

  bool operator==(const RiskState&) const = default;
};

struct KernelParams {
  double a = 1.0;
  double alpha = 0.3;
  double r_min = 0.01;
  double r_fragile = 0.15;
  SourceWeights perturbation_weights = kDefaultSourceWeights;

  bool operator==(const KernelParams&) const = default;
};

enum class Regime : std::uint8_t { kNormal, kFragile, kCollapse };

std::string_view to_string(Regime regime);
Regime regime_from_string(std::string_view name);

struct Attribution {
  double threat_term = 0.0;        // a*T*V*E / R
  double perturbation_term = 0.0;  // alpha * P
  std::array<double, kSourceCount> source_contributions{};  // alpha * P split by w_i * source_i
};

struct Projection {
  double value = 0.0;
  Regime regime = Regime::kNormal;
  double sensitivity = 0.0;  // |d index / dR| = a*T*V*E / R^2
  Attribution attribution;
};

struct Collapse {
  double resilience = 0.0;
  std::string message;
};

// No smoothed number exists on the Collapse branch.
using CiimOutput = std::variant<Projection, Collapse>;

inline constexpr std::string_view kCollapseMessage =
    "resilience at or below collapse threshold; quantitative relationships no longer hold";

// Throws ConfigError when any invariant is violated.
void validate(const KernelParams& params);
void validate_weights(const SourceWeights& weights);
// Throws DomainError.
void validate(const RiskState& state);
void validate(const PerturbationSources& sources);

double aggregate_perturbation(const PerturbationSources& sources, const SourceWeights& weights);

Regime classify_regime(double resilience, const KernelParams& params);

CiimOutput eval_ciim(const RiskState& state, double p_next, const KernelParams& params);

// Present-state evaluation: the perturbation input is aggregated from the
// state's own sources.
CiimOutput assess(const RiskState& state, const KernelParams& params);

// Saturating display map onto [0, 10]: 10 * (1 - exp(-ln2 * raw)).
double normalize_score(double raw);

inline constexpr double kCollapseScore = 10.0;

// Normalized score used wherever a number is unavoidable (reward deltas,
// classifier features). Collapse is pinned to the top of the scale.
double pinned_score(const CiimOutput& output);

inline bool is_collapse(const CiimOutput& output) {
  return std::holds_alternative<Collapse>(output);
}
Regime regime_of(const CiimOutput& output);

// Static baseline for contrast: 10*T*V*E. Ignores resilience and context.
double static_baseline(const RiskState& state);

// JSON (fixed key order).
Json to_json(const RiskState& state);
Json to_json(const PerturbationSources& sources);
Json to_json(const KernelParams& params);
Json to_json(const Attribution& attribution);
Json to_json(const CiimOutput& output);

RiskState risk_state_from_json(const Json& j, const std::string& path);
PerturbationSources sources_from_json(const Json& j, const std::string& path);
// Missing fields fall back to defaults; the result is validated.
KernelParams kernel_params_from_json(const Json& j, const std::string& path);
SourceWeights weights_from_json(const Json& j, const std::string& path);

}  // namespace ciim
