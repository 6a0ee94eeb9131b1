#include "ciim/scenario_sim.hpp"

#include <algorithm>
#include <cmath>

#include "ciim/errors.hpp"

namespace ciim {

namespace {

constexpr std::size_t kThreat = static_cast<std::size_t>(Channel::kThreat);
constexpr std::size_t kResilience = static_cast<std::size_t>(Channel::kResilience);
constexpr std::size_t kDReal = static_cast<std::size_t>(Channel::kDReal);

double resilience_floor(const KernelParams& params) { return params.r_min / 10.0; }

RiskState clamped(const Observation& obs, std::uint64_t tick, const KernelParams& params) {
  return state_of(clamp_to_legal(obs, resilience_floor(params)), tick);
}

void require_finite(double x, const std::string& path) {
  if (!std::isfinite(x)) throw ConfigError("expected a finite number", path);
}

Json optional_string(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

}  // namespace

// ---------------------------------------------------------------- config

void validate(const Dynamics& d) {
  for (std::size_t i = 0; i < kChannelCount; ++i) require_finite(d.drift[i], "dynamics.drift." + std::string(kChannelNames[i]));
  if (!(d.attack.rate >= 0.0 && d.attack.rate <= 1.0)) {
    throw ConfigError("probability must lie in [0, 1]", "dynamics.attack.rate");
  }
  require_finite(d.attack.threat, "dynamics.attack.threat");
  require_finite(d.attack.d_real, "dynamics.attack.d_real");
  require_finite(d.resilience_decay, "dynamics.resilience_decay");
  if (!std::isfinite(d.noise) || d.noise < 0.0) throw ConfigError("noise must be finite and >= 0", "dynamics.noise");
}

void validate(const ScenarioConfig& c) {
  try {
    validate(c.kernel);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), "kernel");
  }
  try {
    validate(c.initial);
  } catch (const DomainError& e) {
    throw ConfigError(e.what(), "initial");
  }
  validate(c.dynamics);
  try {
    validate(c.catalog);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), "catalog");
  }
  try {
    validate(c.agent);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), "agent");
  }
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    if (!std::isfinite(c.ar1.phi[i]) || !std::isfinite(c.ar1.c[i])) {
      throw ConfigError("coefficients must be finite", "forecaster");
    }
  }
  if (c.window < 1) throw ConfigError("window must be >= 1", "window");
  for (std::size_t k = 0; k < c.script.size(); ++k) {
    if (!c.script[k]) continue;
    const bool known = std::any_of(c.catalog.begin(), c.catalog.end(),
                                   [&](const Intervention& i) { return i.id == *c.script[k]; });
    if (!known) throw ConfigError("unknown intervention '" + *c.script[k] + "'", "script[" + std::to_string(k) + "]");
  }
}

ScenarioConfig scenario_config_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  auto at = [&](std::string_view key) { return json_io::join(path, key); };
  ScenarioConfig c;
  c.id = json_io::string_or(j, "id", "", path);
  c.seed = json_io::unsigned_or(j, "seed", 0, path);
  c.initial = risk_state_from_json(json_io::require(j, "initial", path), at("initial"));
  if (auto it = j.find("kernel"); it != j.end()) c.kernel = kernel_params_from_json(*it, at("kernel"));

  if (auto it = j.find("dynamics"); it != j.end()) {
    const std::string dp = at("dynamics");
    json_io::require_object(*it, dp);
    Dynamics& d = c.dynamics;
    if (auto drift = it->find("drift"); drift != it->end()) {
      const std::string fp = json_io::join(dp, "drift");
      json_io::require_object(*drift, fp);
      for (const auto& [key, value] : drift->items()) {
        auto pos = std::find(kChannelNames.begin(), kChannelNames.end(), key);
        if (pos == kChannelNames.end()) throw ConfigError("unknown channel", json_io::join(fp, key));
      }
      for (std::size_t i = 0; i < kChannelCount; ++i) d.drift[i] = json_io::number_or(*drift, kChannelNames[i], 0.0, fp);
    }
    if (auto attack = it->find("attack"); attack != it->end()) {
      const std::string ap = json_io::join(dp, "attack");
      d.attack.rate = json_io::number_or(*attack, "rate", 0.0, ap);
      if (d.attack.rate < 0.0 || d.attack.rate > 1.0) {
        throw ConfigError("probability must lie in [0, 1]", json_io::join(ap, "rate"));
      }
      d.attack.threat = json_io::number_or(*attack, "threat", 0.0, ap);
      d.attack.d_real = json_io::number_or(*attack, "d_real", 0.0, ap);
    }
    d.resilience_decay = json_io::number_or(*it, "resilience_decay", 0.0, dp);
    d.noise = json_io::number_or(*it, "noise", 0.0, dp);
    if (d.noise < 0.0) throw ConfigError("noise must be >= 0", json_io::join(dp, "noise"));
  }

  if (auto it = j.find("catalog"); it != j.end()) c.catalog = catalog_from_json(*it, at("catalog"));
  if (auto it = j.find("forecaster"); it != j.end()) c.ar1 = ar1_from_json(*it, at("forecaster"));
  c.window = json_io::unsigned_or(j, "window", c.window, path);
  if (c.window < 1) throw ConfigError("window must be >= 1", at("window"));
  if (auto it = j.find("agent"); it != j.end()) c.agent = agent_config_from_json(*it, at("agent"));

  if (auto it = j.find("models"); it != j.end()) {
    const std::string mp = at("models");
    c.models.forecaster = json_io::string_or(*it, "forecaster", "", mp);
    c.models.classifier = json_io::string_or(*it, "classifier", "", mp);
    c.models.agent = json_io::string_or(*it, "agent", "", mp);
  }

  if (auto it = j.find("script"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("expected an array of intervention ids", at("script"));
    for (std::size_t k = 0; k < it->size(); ++k) {
      const Json& v = (*it)[k];
      if (v.is_null()) {
        c.script.emplace_back();
      } else if (v.is_string()) {
        c.script.emplace_back(v.get<std::string>());
      } else {
        throw ConfigError("expected an intervention id or null", at("script") + "[" + std::to_string(k) + "]");
      }
    }
  }

  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), path.empty() ? e.path() : json_io::join(path, e.path()));
  }
  return c;
}

Json to_json(const ScenarioConfig& c) {
  Json j = Json::object();
  j["id"] = c.id;
  j["seed"] = c.seed;
  j["initial"] = to_json(c.initial);
  Json d = Json::object();
  Json drift = Json::object();
  for (std::size_t i = 0; i < kChannelCount; ++i) drift[std::string(kChannelNames[i])] = c.dynamics.drift[i];
  d["drift"] = drift;
  d["attack"] = {{"rate", c.dynamics.attack.rate},
                 {"threat", c.dynamics.attack.threat},
                 {"d_real", c.dynamics.attack.d_real}};
  d["resilience_decay"] = c.dynamics.resilience_decay;
  d["noise"] = c.dynamics.noise;
  j["dynamics"] = d;
  j["kernel"] = to_json(c.kernel);
  j["catalog"] = to_json(c.catalog);
  j["forecaster"] = to_json(c.ar1);
  j["window"] = c.window;
  j["agent"] = to_json(c.agent);
  j["models"] = {{"forecaster", c.models.forecaster},
                 {"classifier", c.models.classifier},
                 {"agent", c.models.agent}};
  Json script = Json::array();
  for (const auto& s : c.script) script.push_back(optional_string(s));
  j["script"] = script;
  return j;
}

// ---------------------------------------------------------------- dynamics

RiskState apply_effects(const RiskState& state, const Intervention& action, const KernelParams& params) {
  Observation x = observation_of(state);
  x[kThreat] += action.effects.threat;
  x[static_cast<std::size_t>(Channel::kVulnerability)] += action.effects.vulnerability;
  x[static_cast<std::size_t>(Channel::kExposure)] += action.effects.exposure;
  x[kResilience] += action.effects.resilience;
  return clamped(x, state.t, params);
}

RiskState step(const RiskState& state, const Intervention* action, const Dynamics& dynamics,
               const KernelParams& params, Rng& rng) {
  Observation x = observation_of(state);
  if (action != nullptr) {
    x[kThreat] += action->effects.threat;
    x[static_cast<std::size_t>(Channel::kVulnerability)] += action->effects.vulnerability;
    x[static_cast<std::size_t>(Channel::kExposure)] += action->effects.exposure;
    x[kResilience] += action->effects.resilience;
  }
  for (std::size_t i = 0; i < kChannelCount; ++i) x[i] += dynamics.drift[i];
  if (rng.bernoulli(dynamics.attack.rate)) {
    x[kThreat] += dynamics.attack.threat;
    x[kDReal] += dynamics.attack.d_real;
  }
  x[kResilience] -= dynamics.resilience_decay;
  for (std::size_t i = 0; i < kChannelCount; ++i) x[i] += rng.uniform(-dynamics.noise, dynamics.noise);
  return clamped(x, state.t + 1, params);
}

double ciim_delta(const RiskState& before, const RiskState& after, const KernelParams& params) {
  return pinned_score(assess(after, params)) - pinned_score(assess(before, params));
}

DiscreteState ScenarioEnvironment::reset(Rng&) {
  state_ = config_.initial;
  return discretize(state_, config_.kernel);
}

Transition ScenarioEnvironment::step(std::size_t action, Rng& rng) {
  const Intervention& a = config_.catalog.at(action);
  const RiskState next = ciim::step(state_, &a, config_.dynamics, config_.kernel, rng);
  Transition tr{discretize(next, config_.kernel), ciim_delta(state_, next, config_.kernel), a.cost};
  state_ = next;
  return tr;
}

// ---------------------------------------------------------------- records

Json to_json(const TraceRecord& r) {
  Json j = Json::object();
  j["tick"] = r.tick;
  j["state"] = to_json(r.state);
  j["action"] = optional_string(r.action);
  j["forecast"] = to_json(r.forecast, r.tick + 1);
  j["output"] = to_json(r.output);
  j["baseline"] = r.baseline;
  j["level"] = to_string(r.level);
  j["ensemble_level"] = r.ensemble_level ? Json(to_string(*r.ensemble_level)) : Json(nullptr);
  j["divergence"] = r.divergence;
  j["reward"] = r.reward ? Json(*r.reward) : Json(nullptr);
  return j;
}

Json to_json(const WhatIf& w) {
  Json j = Json::object();
  j["action"] = w.action;
  j["state"] = to_json(w.state);
  j["output"] = to_json(w.output);
  j["reward"] = w.reward;
  return j;
}

ScenarioModels load_models(const ScenarioConfig& config) {
  ScenarioModels m;
  const ModelPaths& p = config.models;
  try {
    if (!p.forecaster.empty()) {
      m.gru = gru_params_from_json(json_io::read_file(p.forecaster, "models.forecaster"), "models.forecaster");
    }
    if (!p.classifier.empty()) {
      m.ensemble =
          stump_ensemble_from_json(json_io::read_file(p.classifier, "models.classifier"), "models.classifier");
    }
    if (!p.agent.empty()) {
      m.agent = qtable_from_json(json_io::read_file(p.agent, "models.agent"), "models.agent");
      if (m.agent->catalog() != config.catalog) {
        throw ConfigError("Q-table catalog differs from the scenario catalog", "models.agent");
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), "models");
  }
  return m;
}

// ---------------------------------------------------------------- scenario

Scenario::Scenario(ScenarioConfig config) : Scenario(config, load_models(config)) {}

Scenario::Scenario(ScenarioConfig config, ScenarioModels models)
    : config_(std::move(config)), models_(std::move(models)), rng_(config_.seed) {
  validate(config_);
  state_ = config_.initial;
  history_.push_back(state_);
  last_ = evaluate(std::nullopt, std::nullopt);
  recent_scores_.push_back(pinned_score(last_.output));
}

TraceRecord Scenario::evaluate(std::optional<std::string> action, std::optional<double> reward) const {
  TraceRecord r;
  r.tick = state_.t;
  r.state = state_;
  r.action = std::move(action);
  r.reward = reward;

  const std::vector<RiskState> rows(history_.begin(), history_.end());
  const SeriesWindow window = SeriesWindow::from_states(rows);
  const double floor = resilience_floor(config_.kernel);
  r.forecast = models_.gru ? forecast_next(*models_.gru, window, floor) : forecast_next(config_.ar1, window, floor);

  const RiskState projected = r.forecast.as_state(state_.t + 1);
  r.output = eval_ciim(projected, aggregate_perturbation(projected.sources, config_.kernel.perturbation_weights),
                       config_.kernel);
  r.baseline = static_baseline(state_);
  const double score = pinned_score(r.output);
  r.level = threshold_classify(score, regime_of(r.output));
  if (models_.ensemble) {
    std::vector<double> scores(recent_scores_.begin(), recent_scores_.end());
    scores.push_back(score);
    const Features x = features_of(projected, r.output, config_.kernel, score_trend(scores));
    const Classification c = classify(*models_.ensemble, x, regime_of(r.output));
    r.ensemble_level = c.level;
    r.divergence = c.divergence;
  }
  return r;
}

const TraceRecord& Scenario::advance(const std::optional<std::string>& action) {
  const Intervention* chosen = action ? &config_.catalog[action_index(config_.catalog, *action)] : nullptr;
  const RiskState next = step(state_, chosen, config_.dynamics, config_.kernel, rng_);
  std::optional<double> r;
  if (chosen != nullptr) r = reward(ciim_delta(state_, next, config_.kernel), chosen->cost, config_.agent.lambda);
  state_ = next;
  history_.push_back(state_);
  while (history_.size() > config_.window) history_.pop_front();
  last_ = evaluate(action, r);
  recent_scores_.push_back(pinned_score(last_.output));
  while (recent_scores_.size() > 2) recent_scores_.pop_front();
  return last_;
}

WhatIf Scenario::whatif(const std::string& action) const {
  const Intervention& a = config_.catalog[action_index(config_.catalog, action)];
  WhatIf w;
  w.action = a.id;
  w.state = apply_effects(state_, a, config_.kernel);
  w.output = assess(w.state, config_.kernel);
  w.reward = reward(ciim_delta(state_, w.state, config_.kernel), a.cost, config_.agent.lambda);
  return w;
}

CiimOutput Scenario::current_output() const {
  const RiskState projected = last_.forecast.as_state(last_.tick + 1);
  return eval_ciim(projected, aggregate_perturbation(projected.sources, config_.kernel.perturbation_weights),
                   config_.kernel);
}

void Scenario::update_norms(double lambda, const SourceWeights& weights) {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda must be >= 0", "lambda");
  try {
    validate_weights(weights);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), "perturbation_weights");
  }
  config_.agent.lambda = lambda;
  config_.kernel.perturbation_weights = weights;
  models_.agent.reset();
}

const QTable& Scenario::agent() {
  if (!models_.agent) {
    ScenarioEnvironment env(config_);
    models_.agent = train_agent(env, config_.agent);
  }
  return *models_.agent;
}

Recommendation Scenario::recommendation() { return recommend(agent(), state_, config_.kernel); }

// ---------------------------------------------------------------- runs

std::string_view to_string(Policy policy) {
  switch (policy) {
    case Policy::kNone: return "none";
    case Policy::kAgent: return "agent";
    case Policy::kScripted: return "scripted";
    case Policy::kInteractive: return "interactive";
  }
  return "none";
}

Policy policy_from_string(std::string_view name) {
  for (Policy p : {Policy::kNone, Policy::kAgent, Policy::kScripted, Policy::kInteractive}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown policy '" + std::string(name) + "'", "policy");
}

std::vector<TraceRecord> run(const ScenarioConfig& config, std::size_t ticks, Policy policy) {
  Scenario scenario(config);
  return run(scenario, ticks, policy);
}

std::vector<TraceRecord> run(Scenario& scenario, std::size_t ticks, Policy policy) {
  if (ticks < 1) throw ConfigError("ticks must be >= 1", "ticks");
  if (policy == Policy::kInteractive) throw ConfigError("interactive traces are driven by the service", "policy");
  std::vector<TraceRecord> records{scenario.last()};
  records.reserve(ticks);
  const auto& script = scenario.config().script;
  for (std::size_t k = 1; k < ticks; ++k) {
    std::optional<std::string> action;
    if (policy == Policy::kAgent) action = scenario.recommendation().action.id;
    if (policy == Policy::kScripted && k - 1 < script.size()) action = script[k - 1];
    records.push_back(scenario.advance(action));
  }
  return records;
}

Json scenario_header(const ScenarioConfig& config, Policy policy, std::optional<std::size_t> ticks) {
  Json h = Json::object();
  h["config"] = to_json(config);
  h["policy"] = to_string(policy);
  if (ticks) h["ticks"] = *ticks;
  return h;
}

std::string trace_line(const TraceRecord& record) { return to_json(record).dump(); }

std::string first_trace_line(const TraceRecord& record, const Json& header) {
  Json j = to_json(record);
  j["scenario"] = header;
  return j.dump();
}

std::string norms_event_line(std::uint64_t tick, double lambda, const SourceWeights& weights) {
  Json j = Json::object();
  j["event"] = "norms";
  j["tick"] = tick;
  j["lambda"] = lambda;
  j["perturbation_weights"] = Json(weights);
  return j.dump();
}

std::vector<std::string> trace_lines(const std::vector<TraceRecord>& records, const ScenarioConfig& config,
                                     Policy policy) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    lines.push_back(i == 0 ? first_trace_line(records[0], scenario_header(config, policy, records.size()))
                           : trace_line(records[i]));
  }
  return lines;
}

Replay replay(const std::vector<std::string>& lines) {
  if (lines.empty()) throw ConfigError("trace is empty", "trace");
  auto parse = [](const std::string& line, std::size_t n) {
    try {
      return Json::parse(line);
    } catch (const Json::parse_error&) {
      throw ConfigError("line is not JSON", "trace[" + std::to_string(n) + "]");
    }
  };
  const Json first = parse(lines[0], 0);
  const Json& header = json_io::require(first, "scenario", "trace[0]");
  const ScenarioConfig config = scenario_config_from_json(json_io::require(header, "config", "scenario"), "scenario.config");
  const Policy policy = policy_from_string(json_io::string_or(header, "policy", "none", "scenario"));

  Replay out;
  if (policy != Policy::kInteractive) {
    const std::uint64_t ticks = json_io::unsigned_or(header, "ticks", 0, "scenario");
    out.scenario.emplace(config);
    out.lines = trace_lines(run(*out.scenario, ticks, policy), config, policy);
    return out;
  }

  Scenario& s = out.scenario.emplace(config);
  out.lines.push_back(first_trace_line(s.last(), scenario_header(config, policy, std::nullopt)));
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const Json j = parse(lines[n], n);
    const std::string p = "trace[" + std::to_string(n) + "]";
    if (j.contains("event")) {
      const double lambda = json_io::number(j, "lambda", p);
      const SourceWeights w = weights_from_json(json_io::require(j, "perturbation_weights", p),
                                                json_io::join(p, "perturbation_weights"));
      s.update_norms(lambda, w);
      out.lines.push_back(norms_event_line(s.last().tick, lambda, w));
      continue;
    }
    const Json& a = json_io::require(j, "action", p);
    std::optional<std::string> action;
    if (a.is_string()) action = a.get<std::string>();
    try {
      out.lines.push_back(trace_line(s.advance(action)));
    } catch (const std::out_of_range&) {
      throw ConfigError("unknown intervention", json_io::join(p, "action"));
    }
  }
  return out;
}

}  // namespace ciim
