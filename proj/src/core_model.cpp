#include "ciim/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ciim/errors.hpp"

namespace ciim {

namespace {

bool in_unit(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

void check_unit(double x, std::string_view name) {
  if (!in_unit(x)) throw DomainError(std::string(name) + " must lie in [0, 1]");
}

void check_resilience(double r) {
  if (!std::isfinite(r) || r <= 0.0 || r > 1.0) throw DomainError("resilience must lie in (0, 1]");
}

}  // namespace

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::kNormal:
      return "NORMAL";
    case Regime::kFragile:
      return "FRAGILE";
    case Regime::kCollapse:
      return "COLLAPSE";
  }
  return "NORMAL";
}

Regime regime_from_string(std::string_view name) {
  if (name == "NORMAL") return Regime::kNormal;
  if (name == "FRAGILE") return Regime::kFragile;
  if (name == "COLLAPSE") return Regime::kCollapse;
  throw ConfigError("unknown regime '" + std::string(name) + "'");
}

void validate_weights(const SourceWeights& weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!in_unit(w)) throw ConfigError("perturbation weight must lie in [0, 1]");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("perturbation weights must sum to 1");
}

void validate(const KernelParams& params) {
  if (!std::isfinite(params.a) || params.a <= 0.0) throw ConfigError("a must be positive");
  if (!std::isfinite(params.alpha) || params.alpha < 0.0) {
    throw ConfigError("alpha must be non-negative");
  }
  if (!(params.r_min > 0.0 && params.r_min < params.r_fragile && params.r_fragile < 1.0)) {
    throw ConfigError("thresholds must satisfy 0 < r_min < r_fragile < 1");
  }
  validate_weights(params.perturbation_weights);
}

void validate(const PerturbationSources& sources) {
  for (std::size_t i = 0; i < kSourceCount; ++i) check_unit(sources.as_array()[i], kSourceNames[i]);
}

void validate(const RiskState& state) {
  check_unit(state.threat, "threat");
  check_unit(state.vulnerability, "vulnerability");
  check_unit(state.exposure, "exposure");
  check_resilience(state.resilience);
  validate(state.sources);
}

double aggregate_perturbation(const PerturbationSources& sources, const SourceWeights& weights) {
  validate_weights(weights);
  validate(sources);
  const auto s = sources.as_array();
  double p = 0.0;
  for (std::size_t i = 0; i < kSourceCount; ++i) p += weights[i] * s[i];
  return std::clamp(p, 0.0, 1.0);
}

Regime classify_regime(double resilience, const KernelParams& params) {
  check_resilience(resilience);
  if (resilience <= params.r_min) return Regime::kCollapse;
  if (resilience <= params.r_fragile) return Regime::kFragile;
  return Regime::kNormal;
}

CiimOutput eval_ciim(const RiskState& state, double p_next, const KernelParams& params) {
  validate(params);
  validate(state);
  check_unit(p_next, "p_next");

  const Regime regime = classify_regime(state.resilience, params);
  if (regime == Regime::kCollapse) {
    return Collapse{state.resilience, std::string(kCollapseMessage)};
  }

  // Division is only reached with resilience > r_min > 0.
  const double product = params.a * state.threat * state.vulnerability * state.exposure;
  Projection out;
  out.regime = regime;
  out.attribution.threat_term = product / state.resilience;
  out.attribution.perturbation_term = params.alpha * p_next;
  out.sensitivity = product / (state.resilience * state.resilience);

  // Each source's share of the weighted average, scaled onto alpha * p_next.
  // When p_next is the aggregate of these same sources this reduces to
  // alpha * w_i * s_i.
  const auto s = state.sources.as_array();
  const auto& w = params.perturbation_weights;
  double aggregate = 0.0;
  for (std::size_t i = 0; i < kSourceCount; ++i) aggregate += w[i] * s[i];
  for (std::size_t i = 0; i < kSourceCount; ++i) {
    const double share = aggregate > 0.0 ? (w[i] * s[i]) / aggregate : w[i];
    out.attribution.source_contributions[i] = out.attribution.perturbation_term * share;
  }

  out.value = out.attribution.threat_term + out.attribution.perturbation_term;
  return out;
}

CiimOutput assess(const RiskState& state, const KernelParams& params) {
  return eval_ciim(state, aggregate_perturbation(state.sources, params.perturbation_weights), params);
}

double normalize_score(double raw) {
  if (std::isnan(raw) || raw < 0.0) throw DomainError("raw score must be non-negative");
  if (std::isinf(raw)) return 10.0;
  return std::clamp(-10.0 * std::expm1(-std::numbers::ln2 * raw), 0.0, 10.0);
}

double pinned_score(const CiimOutput& output) {
  if (const auto* p = std::get_if<Projection>(&output)) return normalize_score(p->value);
  return kCollapseScore;
}

Regime regime_of(const CiimOutput& output) {
  if (const auto* p = std::get_if<Projection>(&output)) return p->regime;
  return Regime::kCollapse;
}

double static_baseline(const RiskState& state) {
  validate(state);
  return 10.0 * state.threat * state.vulnerability * state.exposure;
}

// ---------------------------------------------------------------- JSON

Json to_json(const PerturbationSources& sources) {
  Json j = Json::object();
  const auto s = sources.as_array();
  for (std::size_t i = 0; i < kSourceCount; ++i) j[std::string(kSourceNames[i])] = s[i];
  return j;
}

Json to_json(const RiskState& state) {
  Json j = Json::object();
  j["t"] = state.t;
  j["threat"] = state.threat;
  j["vulnerability"] = state.vulnerability;
  j["exposure"] = state.exposure;
  j["resilience"] = state.resilience;
  j["sources"] = to_json(state.sources);
  return j;
}

Json to_json(const KernelParams& params) {
  Json j = Json::object();
  j["a"] = params.a;
  j["alpha"] = params.alpha;
  j["r_min"] = params.r_min;
  j["r_fragile"] = params.r_fragile;
  j["perturbation_weights"] = Json::array();
  for (double w : params.perturbation_weights) j["perturbation_weights"].push_back(w);
  return j;
}

Json to_json(const Attribution& attribution) {
  Json j = Json::object();
  j["threat_term"] = attribution.threat_term;
  j["perturbation_term"] = attribution.perturbation_term;
  Json contributions = Json::object();
  for (std::size_t i = 0; i < kSourceCount; ++i) {
    contributions[std::string(kSourceNames[i])] = attribution.source_contributions[i];
  }
  j["source_contributions"] = std::move(contributions);
  return j;
}

Json to_json(const CiimOutput& output) {
  Json j = Json::object();
  if (const auto* p = std::get_if<Projection>(&output)) {
    j["kind"] = "projection";
    j["value"] = p->value;
    j["regime"] = to_string(p->regime);
    j["sensitivity"] = p->sensitivity;
    j["normalized_score"] = normalize_score(p->value);
    j["attribution"] = to_json(p->attribution);
  } else {
    const auto& c = std::get<Collapse>(output);
    j["kind"] = "collapse";
    j["regime"] = to_string(Regime::kCollapse);
    j["resilience"] = c.resilience;
    j["message"] = c.message;
  }
  return j;
}

PerturbationSources sources_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  std::array<double, kSourceCount> v{};
  for (std::size_t i = 0; i < kSourceCount; ++i) {
    v[i] = json_io::number_in(j, kSourceNames[i], 0.0, 1.0, path);
  }
  return PerturbationSources::from_array(v);
}

RiskState risk_state_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  RiskState s;
  s.t = json_io::unsigned_or(j, "t", 0, path);
  s.threat = json_io::number_in(j, "threat", 0.0, 1.0, path);
  s.vulnerability = json_io::number_in(j, "vulnerability", 0.0, 1.0, path);
  s.exposure = json_io::number_in(j, "exposure", 0.0, 1.0, path);
  s.resilience = json_io::number_in(j, "resilience", 0.0, 1.0, path);
  if (s.resilience <= 0.0) {
    throw ConfigError("resilience must be strictly positive", json_io::join(path, "resilience"));
  }
  auto it = j.find("sources");
  if (it != j.end()) s.sources = sources_from_json(*it, json_io::join(path, "sources"));
  return s;
}

SourceWeights weights_from_json(const Json& j, const std::string& path) {
  SourceWeights w{};
  if (j.is_array()) {
    if (j.size() != kSourceCount) throw ConfigError("expected 4 weights", path);
    for (std::size_t i = 0; i < kSourceCount; ++i) {
      const std::string p = path + "[" + std::to_string(i) + "]";
      if (!j[i].is_number()) throw ConfigError("expected a number", p);
      w[i] = j[i].get<double>();
    }
  } else if (j.is_object()) {
    for (std::size_t i = 0; i < kSourceCount; ++i) w[i] = json_io::number(j, kSourceNames[i], path);
  } else {
    throw ConfigError("expected an array of 4 weights", path);
  }
  try {
    validate_weights(w);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), path);
  }
  return w;
}

KernelParams kernel_params_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  KernelParams p;
  p.a = json_io::number_or(j, "a", p.a, path);
  p.alpha = json_io::number_or(j, "alpha", p.alpha, path);
  p.r_min = json_io::number_or(j, "r_min", p.r_min, path);
  p.r_fragile = json_io::number_or(j, "r_fragile", p.r_fragile, path);
  if (auto it = j.find("perturbation_weights"); it != j.end()) {
    p.perturbation_weights = weights_from_json(*it, json_io::join(path, "perturbation_weights"));
  }
  try {
    validate(p);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), path);
  }
  return p;
}

}  // namespace ciim
