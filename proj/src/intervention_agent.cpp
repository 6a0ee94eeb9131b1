#include "ciim/intervention_agent.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ciim/errors.hpp"

namespace ciim {

Catalog default_catalog() {
  return {
      {"observe", 0.0, {}},
      {"patch", 0.2, {0.0, -0.15, 0.0, 0.0}},
      {"harden", 0.3, {0.0, 0.0, 0.0, 0.10}},
      {"isolate", 0.5, {-0.05, 0.0, -0.30, 0.0}},
  };
}

void validate(const Catalog& catalog) {
  if (catalog.empty()) throw ConfigError("intervention catalog is empty");
  std::set<std::string> ids;
  bool has_observe = false;
  for (const auto& i : catalog) {
    if (i.id.empty()) throw ConfigError("intervention id must be non-empty");
    if (!ids.insert(i.id).second) throw ConfigError("duplicate intervention id '" + i.id + "'");
    if (!std::isfinite(i.cost) || i.cost < 0.0) throw ConfigError("intervention cost must be >= 0: " + i.id);
    const auto& e = i.effects;
    if (!std::isfinite(e.threat) || !std::isfinite(e.vulnerability) || !std::isfinite(e.exposure) ||
        !std::isfinite(e.resilience)) {
      throw ConfigError("intervention effects must be finite: " + i.id);
    }
    if (i.id == kObserve) {
      if (i.cost != 0.0 || e != Effects{}) throw ConfigError("'observe' must have zero cost and no effect");
      has_observe = true;
    }
  }
  if (!has_observe) throw ConfigError("catalog must include an 'observe' action");
}

std::size_t action_index(const Catalog& catalog, std::string_view id) {
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (catalog[i].id == id) return i;
  }
  throw std::out_of_range("unknown intervention '" + std::string(id) + "'");
}

void validate(const AgentConfig& c) {
  if (!std::isfinite(c.lambda) || c.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (!std::isfinite(c.learning_rate) || c.learning_rate < 0.0 || c.learning_rate > 1.0) {
    throw ConfigError("learning_rate must lie in [0, 1]");
  }
  if (!(c.discount >= 0.0 && c.discount < 1.0)) throw ConfigError("discount must lie in [0, 1)");
  if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (c.episodes < 0) throw ConfigError("episodes must be >= 0");
  if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
}

DiscreteState DiscreteState::from_index(std::size_t i) {
  if (i >= kCount) throw std::out_of_range("discrete state index out of range");
  return {static_cast<Regime>(i / kLevelCount), static_cast<RiskLevel>(i % kLevelCount)};
}

DiscreteState discretize(const RiskState& state, const KernelParams& params, const LevelCutpoints& cuts) {
  const CiimOutput out = assess(state, params);
  const Regime regime = regime_of(out);
  return {regime, threshold_classify(pinned_score(out), regime, cuts)};
}

double reward(double delta_ciim, double cost, double lambda) { return -delta_ciim - lambda * cost; }

// ---------------------------------------------------------------- QTable

QTable::QTable(Catalog catalog, double lambda, double initial_value)
    : catalog_(std::move(catalog)),
      lambda_(lambda),
      values_(DiscreteState::kCount * catalog_.size(), initial_value),
      visits_(DiscreteState::kCount * catalog_.size(), 0) {
  if (catalog_.empty()) throw ConfigError("intervention catalog is empty");
}

std::size_t QTable::slot(DiscreteState s, std::size_t action) const {
  if (action >= catalog_.size()) throw std::out_of_range("unknown action index");
  const std::size_t si = s.index();
  if (si >= DiscreteState::kCount) throw std::out_of_range("unknown state");
  return si * catalog_.size() + action;
}

double QTable::q(DiscreteState s, std::size_t action) const { return values_[slot(s, action)]; }
double& QTable::q(DiscreteState s, std::size_t action) { return values_[slot(s, action)]; }
std::uint64_t QTable::visits(DiscreteState s, std::size_t action) const { return visits_[slot(s, action)]; }
void QTable::record_visit(DiscreteState s, std::size_t action) { ++visits_[slot(s, action)]; }

std::size_t QTable::greedy(DiscreteState s) const {
  std::size_t best = 0;
  for (std::size_t a = 1; a < catalog_.size(); ++a) {
    if (q(s, a) > q(s, best)) best = a;
  }
  return best;
}

void q_update(QTable& table, DiscreteState s, std::size_t action, double r, DiscreteState next,
              const AgentConfig& config) {
  const double target = r + config.discount * table.q(next, table.greedy(next));
  double& entry = table.q(s, action);
  entry += config.learning_rate * (target - entry);
  table.record_visit(s, action);
}

QTable train_agent(Environment& env, const AgentConfig& config) {
  validate(config);
  const Catalog& catalog = env.catalog();
  if (catalog.empty()) throw ConfigError("intervention catalog is empty");
  QTable table(catalog, config.lambda);
  Rng rng(config.seed);
  for (int episode = 0; episode < config.episodes; ++episode) {
    DiscreteState s = env.reset(rng);
    for (int t = 0; t < config.horizon; ++t) {
      const std::size_t a = rng.bernoulli(config.epsilon) ? rng.index(catalog.size()) : table.greedy(s);
      const Transition tr = env.step(a, rng);
      q_update(table, s, a, reward(tr.delta_ciim, tr.cost, config.lambda), tr.next, config);
      s = tr.next;
    }
  }
  return table;
}

Recommendation recommend(const QTable& table, DiscreteState state) {
  Recommendation rec;
  const std::size_t best = table.greedy(state);
  rec.action = table.catalog()[best];
  rec.expected_reward = table.q(state, best);
  rec.state = state;
  rec.lambda = table.lambda();
  for (std::size_t a = 0; a < table.action_count(); ++a) {
    rec.rationale.emplace_back(table.catalog()[a].id, table.q(state, a));
  }
  return rec;
}

Recommendation recommend(const QTable& table, const RiskState& state, const KernelParams& params,
                         const LevelCutpoints& cuts) {
  return recommend(table, discretize(state, params, cuts));
}

// ---------------------------------------------------------------- MDP oracle

TabularMdp::TabularMdp(Catalog catalog, std::vector<Node> nodes)
    : catalog_(std::move(catalog)), nodes_(std::move(nodes)) {
  if (catalog_.empty()) throw ConfigError("intervention catalog is empty");
  if (nodes_.empty()) throw ConfigError("MDP has no states");
  std::set<std::size_t> seen;
  for (const auto& n : nodes_) {
    if (!seen.insert(n.state.index()).second) throw ConfigError("MDP states must be distinct");
    if (n.next.size() != catalog_.size()) throw ConfigError("MDP node needs one successor per action");
    for (std::size_t j : n.next) {
      if (j >= nodes_.size()) throw ConfigError("MDP successor out of range");
    }
    if (!(n.score >= 0.0 && n.score <= 10.0)) throw ConfigError("MDP score must lie in [0, 10]");
  }
}

std::size_t TabularMdp::node_of(DiscreteState s) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].state == s) return i;
  }
  throw std::out_of_range("state not in MDP");
}

DiscreteState TabularMdp::reset(Rng& rng) {
  current_ = rng.index(nodes_.size());
  return nodes_[current_].state;
}

Transition TabularMdp::step(std::size_t action, Rng&) {
  if (action >= catalog_.size()) throw std::out_of_range("unknown action index");
  const Node& from = nodes_[current_];
  current_ = from.next[action];
  const Node& to = nodes_[current_];
  return {to.state, to.score - from.score, catalog_[action].cost};
}

ValueIterationResult value_iteration(const TabularMdp& mdp, double lambda, double discount,
                                     double tolerance) {
  const auto& nodes = mdp.nodes();
  const auto& catalog = mdp.catalog();
  ValueIterationResult res;
  res.q.assign(nodes.size(), std::vector<double>(catalog.size(), 0.0));
  std::vector<double> v(nodes.size(), 0.0);
  for (res.iterations = 1; res.iterations <= 1'000'000; ++res.iterations) {
    double change = 0.0;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      for (std::size_t a = 0; a < catalog.size(); ++a) {
        const std::size_t m = nodes[n].next[a];
        res.q[n][a] = reward(nodes[m].score - nodes[n].score, catalog[a].cost, lambda) + discount * v[m];
      }
    }
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const double best = *std::max_element(res.q[n].begin(), res.q[n].end());
      change = std::max(change, std::abs(best - v[n]));
      v[n] = best;
    }
    if (change <= tolerance) break;
  }
  for (const auto& row : res.q) {
    res.policy.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return res;
}

TabularMdp frozen_test_mdp() {
  Catalog catalog{{"observe", 0.0, {}}, {"harden", 0.1, {0.0, 0.0, 0.0, 0.10}}};
  std::vector<TabularMdp::Node> nodes{
      {{Regime::kNormal, RiskLevel::kLow}, 2.0, {1, 0}},
      {{Regime::kNormal, RiskLevel::kHigh}, 6.0, {2, 0}},
      {{Regime::kFragile, RiskLevel::kCritical}, 9.0, {2, 1}},
  };
  return TabularMdp(std::move(catalog), std::move(nodes));
}

// ---------------------------------------------------------------- JSON

Json to_json(const Intervention& i) {
  Json j = Json::object();
  j["id"] = i.id;
  j["cost"] = i.cost;
  Json e = Json::object();
  e["threat"] = i.effects.threat;
  e["vulnerability"] = i.effects.vulnerability;
  e["exposure"] = i.effects.exposure;
  e["resilience"] = i.effects.resilience;
  j["effects"] = std::move(e);
  return j;
}

Json to_json(const Catalog& catalog) {
  Json arr = Json::array();
  for (const auto& i : catalog) arr.push_back(to_json(i));
  return arr;
}

Catalog catalog_from_json(const Json& j, const std::string& path) {
  const Json* items = &j;
  std::string ipath = path;
  if (j.is_object()) {
    items = &json_io::require(j, "interventions", path);
    ipath = json_io::join(path, "interventions");
  }
  if (!items->is_array()) throw ConfigError("expected an array of interventions", ipath);
  Catalog catalog;
  for (std::size_t k = 0; k < items->size(); ++k) {
    const Json& item = (*items)[k];
    const std::string p = ipath + "[" + std::to_string(k) + "]";
    Intervention i;
    i.id = json_io::string_or(item, "id", "", p);
    i.cost = json_io::number_or(item, "cost", 0.0, p);
    if (auto it = item.find("effects"); it != item.end()) {
      const std::string ep = json_io::join(p, "effects");
      i.effects.threat = json_io::number_or(*it, "threat", 0.0, ep);
      i.effects.vulnerability = json_io::number_or(*it, "vulnerability", 0.0, ep);
      i.effects.exposure = json_io::number_or(*it, "exposure", 0.0, ep);
      i.effects.resilience = json_io::number_or(*it, "resilience", 0.0, ep);
    }
    catalog.push_back(std::move(i));
  }
  try {
    validate(catalog);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), ipath);
  }
  return catalog;
}

Json to_json(const AgentConfig& c) {
  Json j = Json::object();
  j["lambda"] = c.lambda;
  j["learning_rate"] = c.learning_rate;
  j["discount"] = c.discount;
  j["epsilon"] = c.epsilon;
  j["episodes"] = c.episodes;
  j["horizon"] = c.horizon;
  j["seed"] = c.seed;
  return j;
}

AgentConfig agent_config_from_json(const Json& j, const std::string& path) {
  AgentConfig c;
  c.lambda = json_io::number_or(j, "lambda", c.lambda, path);
  c.learning_rate = json_io::number_or(j, "learning_rate", c.learning_rate, path);
  c.discount = json_io::number_or(j, "discount", c.discount, path);
  c.epsilon = json_io::number_or(j, "epsilon", c.epsilon, path);
  c.episodes = static_cast<int>(json_io::unsigned_or(j, "episodes", static_cast<std::uint64_t>(c.episodes), path));
  c.horizon = static_cast<int>(json_io::unsigned_or(j, "horizon", static_cast<std::uint64_t>(c.horizon), path));
  c.seed = json_io::unsigned_or(j, "seed", c.seed, path);
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), path);
  }
  return c;
}

Json to_json(const QTable& table) {
  Json j = Json::object();
  j["format"] = "ciim.qtable";
  j["version"] = 1;
  j["lambda"] = table.lambda();
  j["catalog"] = to_json(table.catalog());
  Json states = Json::array();
  for (std::size_t i = 0; i < DiscreteState::kCount; ++i) {
    const DiscreteState s = DiscreteState::from_index(i);
    Json row = Json::object();
    row["regime"] = to_string(s.regime);
    row["level"] = to_string(s.level);
    row["q"] = Json::array();
    row["visits"] = Json::array();
    for (std::size_t a = 0; a < table.action_count(); ++a) {
      row["q"].push_back(table.q(s, a));
      row["visits"].push_back(table.visits(s, a));
    }
    states.push_back(std::move(row));
  }
  j["states"] = std::move(states);
  return j;
}

QTable qtable_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  if (json_io::string_or(j, "format", "", path) != "ciim.qtable") {
    throw ConfigError("not a Q-table document", json_io::join(path, "format"));
  }
  if (json_io::unsigned_or(j, "version", 0, path) != 1) {
    throw ConfigError("unsupported version", json_io::join(path, "version"));
  }
  QTable table(catalog_from_json(json_io::require(j, "catalog", path), json_io::join(path, "catalog")),
               json_io::number(j, "lambda", path));
  const Json& states = json_io::require(j, "states", path);
  const std::string spath = json_io::join(path, "states");
  if (!states.is_array() || states.size() != DiscreteState::kCount) {
    throw ConfigError("expected 12 state rows", spath);
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string p = spath + "[" + std::to_string(i) + "]";
    DiscreteState s;
    try {
      s = {regime_from_string(json_io::string_or(states[i], "regime", "", p)),
           risk_level_from_string(json_io::string_or(states[i], "level", "", p))};
    } catch (const ConfigError& e) {
      throw ConfigError(e.message(), p);
    }
    const Json& q = json_io::require(states[i], "q", p);
    const Json& visits = json_io::require(states[i], "visits", p);
    if (!q.is_array() || q.size() != table.action_count() || !visits.is_array() ||
        visits.size() != table.action_count()) {
      throw ConfigError("row width does not match catalog", p);
    }
    for (std::size_t a = 0; a < table.action_count(); ++a) {
      if (!q[a].is_number() || !std::isfinite(q[a].get<double>())) throw ConfigError("expected a finite number", p + ".q");
      if (!visits[a].is_number_unsigned()) throw ConfigError("expected a count", p + ".visits");
      table.q(s, a) = q[a].get<double>();
      for (std::uint64_t v = visits[a].get<std::uint64_t>(); v > 0; --v) table.record_visit(s, a);
    }
  }
  return table;
}

Json to_json(const TabularMdp& mdp, double lambda, double discount) {
  Json j = Json::object();
  j["format"] = "ciim.mdp";
  j["version"] = 1;
  j["lambda"] = lambda;
  j["discount"] = discount;
  j["catalog"] = to_json(mdp.catalog());
  Json states = Json::array();
  for (const auto& n : mdp.nodes()) {
    Json row = Json::object();
    row["regime"] = to_string(n.state.regime);
    row["level"] = to_string(n.state.level);
    row["score"] = n.score;
    Json next = Json::object();
    for (std::size_t a = 0; a < mdp.catalog().size(); ++a) next[mdp.catalog()[a].id] = n.next[a];
    row["next"] = std::move(next);
    states.push_back(std::move(row));
  }
  j["states"] = std::move(states);
  return j;
}

MdpFixture mdp_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  if (json_io::string_or(j, "format", "", path) != "ciim.mdp") {
    throw ConfigError("not an MDP document", json_io::join(path, "format"));
  }
  Catalog catalog = catalog_from_json(json_io::require(j, "catalog", path), json_io::join(path, "catalog"));
  const Json& states = json_io::require(j, "states", path);
  const std::string spath = json_io::join(path, "states");
  if (!states.is_array()) throw ConfigError("expected an array", spath);
  std::vector<TabularMdp::Node> nodes;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string p = spath + "[" + std::to_string(i) + "]";
    TabularMdp::Node n;
    try {
      n.state = {regime_from_string(json_io::string_or(states[i], "regime", "", p)),
                 risk_level_from_string(json_io::string_or(states[i], "level", "", p))};
    } catch (const ConfigError& e) {
      throw ConfigError(e.message(), p);
    }
    n.score = json_io::number(states[i], "score", p);
    const Json& next = json_io::require(states[i], "next", p);
    for (const auto& action : catalog) {
      const Json& target = json_io::require(next, action.id, p + ".next");
      if (!target.is_number_unsigned()) throw ConfigError("expected a state index", p + ".next." + action.id);
      n.next.push_back(target.get<std::size_t>());
    }
    nodes.push_back(std::move(n));
  }
  const double lambda = json_io::number_or(j, "lambda", 1.0, path);
  const double discount = json_io::number_or(j, "discount", 0.9, path);
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0", json_io::join(path, "lambda"));
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("discount must lie in [0, 1)", json_io::join(path, "discount"));
  try {
    return {TabularMdp(std::move(catalog), std::move(nodes)), lambda, discount};
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), path);
  }
}

Json to_json(const Recommendation& rec) {
  Json j = Json::object();
  j["action"] = rec.action.id;
  j["cost"] = rec.action.cost;
  j["expected_reward"] = rec.expected_reward;
  j["state"] = {{"regime", to_string(rec.state.regime)}, {"level", to_string(rec.state.level)}};
  j["lambda"] = rec.lambda;
  Json rationale = Json::array();
  for (const auto& [id, q] : rec.rationale) {
    Json r = Json::object();
    r["action"] = id;
    r["q"] = q;
    rationale.push_back(std::move(r));
  }
  j["rationale"] = std::move(rationale);
  return j;
}

}  // namespace ciim
