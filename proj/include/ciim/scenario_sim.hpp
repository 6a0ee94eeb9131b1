#pragma once

// Discrete-time synthetic organization. One tick is one model step; the
// pipeline per tick is forecast -> kernel on the forecast -> classify ->
// optional intervention -> reward -> step.

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "ciim/classifier.hpp"
#include "ciim/core_model.hpp"
#include "ciim/forecaster.hpp"
#include "ciim/intervention_agent.hpp"
#include "ciim/json_io.hpp"
#include "ciim/rng.hpp"

namespace ciim {

struct AttackModel {
  double rate = 0.0;    // per-tick probability
  double threat = 0.0;  // added to T on an attack
  double d_real = 0.0;  // added to the real-time intelligence source
};

struct Dynamics {
  Observation drift{};  // additive per tick, channel order of kChannelNames
  AttackModel attack;
  double resilience_decay = 0.0;  // subtracted from R per tick
  double noise = 0.0;             // uniform in [-noise, noise] per channel
};

void validate(const Dynamics& dynamics);

// Optional trained artifacts, referenced by file path.
struct ModelPaths {
  std::string forecaster;  // GRU document; empty means the AR1 model below
  std::string classifier;  // stump ensemble; empty means oracle only
  std::string agent;       // Q-table; empty means train on this scenario
};

struct ScenarioConfig {
  std::string id;  // optional; the service assigns one when empty
  std::uint64_t seed = 0;
  RiskState initial;
  Dynamics dynamics;
  KernelParams kernel;
  Catalog catalog = default_catalog();
  Ar1Model ar1;
  std::size_t window = 8;  // forecaster history length
  AgentConfig agent;
  ModelPaths models;
  // Action applied on the transition into tick k+1, for the scripted policy.
  std::vector<std::optional<std::string>> script;
};

// Throws ConfigError with the field path.
void validate(const ScenarioConfig& config);
ScenarioConfig scenario_config_from_json(const Json& j, const std::string& path = "");
Json to_json(const ScenarioConfig& config);

// One tick of dynamics. `action` may be null. Order: intervention effects,
// drift, attack draw, resilience decay, noise draw; then clamp, with R floored
// at r_min / 10. Always consumes exactly 9 draws so streams stay aligned.
RiskState step(const RiskState& state, const Intervention* action, const Dynamics& dynamics,
               const KernelParams& params, Rng& rng);

// Intervention effects alone, clamped. Used for what-if previews.
RiskState apply_effects(const RiskState& state, const Intervention& action, const KernelParams& params);

// Change in pinned normalized score between two present-state evaluations.
double ciim_delta(const RiskState& before, const RiskState& after, const KernelParams& params);

struct TraceRecord {
  std::uint64_t tick = 0;
  RiskState state;
  std::optional<std::string> action;  // applied on the transition into this tick
  Forecast forecast;                  // of tick + 1
  CiimOutput output;                  // kernel on the forecast
  double baseline = 0.0;              // static_baseline(state)
  RiskLevel level = RiskLevel::kLow;  // threshold oracle
  std::optional<RiskLevel> ensemble_level;
  bool divergence = false;
  std::optional<double> reward;
};

Json to_json(const TraceRecord& record);

struct ScenarioModels {
  std::optional<GruParams> gru;
  std::optional<StumpEnsemble> ensemble;
  std::optional<QTable> agent;
};

// Reads the files named in config.models. Throws ConfigError.
ScenarioModels load_models(const ScenarioConfig& config);

// Learner's view of the scenario: episodes restart from the initial state.
class ScenarioEnvironment final : public Environment {
 public:
  explicit ScenarioEnvironment(const ScenarioConfig& config) : config_(config) {}

  const Catalog& catalog() const override { return config_.catalog; }
  DiscreteState reset(Rng& rng) override;
  Transition step(std::size_t action, Rng& rng) override;

 private:
  const ScenarioConfig& config_;
  RiskState state_;
};

struct WhatIf {
  std::string action;
  RiskState state;  // after the intervention effects only
  CiimOutput output;
  double reward = 0.0;
};

Json to_json(const WhatIf& whatif);

// A live scenario. Not thread-safe; callers serialize access.
class Scenario {
 public:
  explicit Scenario(ScenarioConfig config);
  Scenario(ScenarioConfig config, ScenarioModels models);

  const ScenarioConfig& config() const { return config_; }
  const RiskState& state() const { return state_; }
  const TraceRecord& last() const { return last_; }
  const Rng& rng() const { return rng_; }

  // Advances one tick. Throws std::out_of_range for an action not in the
  // catalog, leaving the scenario untouched.
  const TraceRecord& advance(const std::optional<std::string>& action);

  WhatIf whatif(const std::string& action) const;

  // The last record's forecast re-evaluated under the current norms.
  CiimOutput current_output() const;

  // Validates, then applies. The agent is retrained under the new lambda.
  void update_norms(double lambda, const SourceWeights& weights);

  // Trained on first use when no table was supplied.
  const QTable& agent();
  Recommendation recommendation();

 private:
  TraceRecord evaluate(std::optional<std::string> action, std::optional<double> reward) const;

  ScenarioConfig config_;
  ScenarioModels models_;
  Rng rng_;
  RiskState state_;
  std::deque<RiskState> history_;
  std::deque<double> recent_scores_;
  TraceRecord last_;
};

enum class Policy : std::uint8_t { kNone, kAgent, kScripted, kInteractive };
std::string_view to_string(Policy policy);
Policy policy_from_string(std::string_view name);

// Throws ConfigError before tick 0 for an invalid config; ticks >= 1.
std::vector<TraceRecord> run(const ScenarioConfig& config, std::size_t ticks, Policy policy);
std::vector<TraceRecord> run(Scenario& scenario, std::size_t ticks, Policy policy);

// Header carried by the first line of every trace so it can be re-simulated.
Json scenario_header(const ScenarioConfig& config, Policy policy, std::optional<std::size_t> ticks);
std::string trace_line(const TraceRecord& record);
std::string first_trace_line(const TraceRecord& record, const Json& header);
std::string norms_event_line(std::uint64_t tick, double lambda, const SourceWeights& weights);
std::vector<std::string> trace_lines(const std::vector<TraceRecord>& records, const ScenarioConfig& config,
                                     Policy policy);

// Re-simulates a trace from its header (and, for interactive traces, its
// recorded actions and norm events). Returns the regenerated lines and the
// final scenario. Throws ConfigError on an unreadable trace.
struct Replay {
  std::vector<std::string> lines;
  std::optional<Scenario> scenario;
};
Replay replay(const std::vector<std::string>& lines);

}  // namespace ciim
