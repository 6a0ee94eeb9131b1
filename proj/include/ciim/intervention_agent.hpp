#pragma once

// Tabular Q-learning over (regime, risk level) with reward
//
//   reward = -delta_index - lambda * action_cost
//
// plus a value-iteration oracle for small deterministic MDPs.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ciim/classifier.hpp"
#include "ciim/core_model.hpp"
#include "ciim/json_io.hpp"
#include "ciim/rng.hpp"

namespace ciim {

// Additive deltas on the kernel inputs; the caller clamps afterwards.
struct Effects {
  double threat = 0.0;
  double vulnerability = 0.0;
  double exposure = 0.0;
  double resilience = 0.0;

  bool operator==(const Effects&) const = default;
};

struct Intervention {
  std::string id;
  double cost = 0.0;
  Effects effects;

  bool operator==(const Intervention&) const = default;
};

using Catalog = std::vector<Intervention>;

inline constexpr std::string_view kObserve = "observe";

// observe (0), patch (0.2, V -0.15), harden (0.3, R +0.10),
// isolate (0.5, E -0.30, T -0.05).
Catalog default_catalog();

// Non-empty, unique ids, non-negative finite costs, and a zero-cost
// zero-effect "observe" entry. Throws ConfigError.
void validate(const Catalog& catalog);
// Index of the entry with this id; throws std::out_of_range when absent.
std::size_t action_index(const Catalog& catalog, std::string_view id);

struct AgentConfig {
  double lambda = 1.0;
  double learning_rate = 0.1;
  double discount = 0.9;
  double epsilon = 0.2;
  int episodes = 2000;
  int horizon = 20;
  std::uint64_t seed = 0;

  bool operator==(const AgentConfig&) const = default;
};

void validate(const AgentConfig& config);

struct DiscreteState {
  Regime regime = Regime::kNormal;
  RiskLevel level = RiskLevel::kLow;

  static constexpr std::size_t kCount = 12;
  std::size_t index() const { return static_cast<std::size_t>(regime) * kLevelCount + static_cast<std::size_t>(level); }
  static DiscreteState from_index(std::size_t i);

  bool operator==(const DiscreteState&) const = default;
};

// Present-state evaluation, then the threshold oracle on its pinned score.
DiscreteState discretize(const RiskState& state, const KernelParams& params, const LevelCutpoints& cuts = {});

double reward(double delta_ciim, double cost, double lambda);

class QTable {
 public:
  QTable() = default;
  QTable(Catalog catalog, double lambda, double initial_value = 0.0);

  const Catalog& catalog() const { return catalog_; }
  std::size_t action_count() const { return catalog_.size(); }
  double lambda() const { return lambda_; }

  double q(DiscreteState s, std::size_t action) const;
  double& q(DiscreteState s, std::size_t action);
  std::uint64_t visits(DiscreteState s, std::size_t action) const;
  void record_visit(DiscreteState s, std::size_t action);

  // Argmax over actions; ties go to the earlier catalog entry.
  std::size_t greedy(DiscreteState s) const;

  bool operator==(const QTable&) const = default;

 private:
  std::size_t slot(DiscreteState s, std::size_t action) const;

  Catalog catalog_;
  double lambda_ = 1.0;
  std::vector<double> values_;
  std::vector<std::uint64_t> visits_;
};

// Q(s,a) += lr * (r + gamma * max_a' Q(s',a') - Q(s,a)). Touches only (s,a).
void q_update(QTable& table, DiscreteState s, std::size_t action, double r, DiscreteState next,
              const AgentConfig& config);

struct Transition {
  DiscreteState next;
  double delta_ciim = 0.0;  // change in pinned normalized score
  double cost = 0.0;
};

// Episodic environment seen by the learner.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual const Catalog& catalog() const = 0;
  virtual DiscreteState reset(Rng& rng) = 0;
  virtual Transition step(std::size_t action, Rng& rng) = 0;
};

// Throws ConfigError for an empty catalog or invalid config.
QTable train_agent(Environment& env, const AgentConfig& config);

struct Recommendation {
  Intervention action;
  double expected_reward = 0.0;
  DiscreteState state;
  double lambda = 0.0;
  std::vector<std::pair<std::string, double>> rationale;  // every action's Q value, catalog order
};

Recommendation recommend(const QTable& table, DiscreteState state);
// lambda is the one the table was trained with; it is echoed for review.
Recommendation recommend(const QTable& table, const RiskState& state, const KernelParams& params,
                         const LevelCutpoints& cuts = {});

// ---------------------------------------------------------------- oracle MDP

// Deterministic tabular MDP whose states carry a fixed normalized score.
class TabularMdp final : public Environment {
 public:
  struct Node {
    DiscreteState state;
    double score = 0.0;
    std::vector<std::size_t> next;  // successor node per catalog action
  };

  TabularMdp(Catalog catalog, std::vector<Node> nodes);

  const Catalog& catalog() const override { return catalog_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  DiscreteState reset(Rng& rng) override;
  Transition step(std::size_t action, Rng& rng) override;

 private:
  std::size_t node_of(DiscreteState s) const;

  Catalog catalog_;
  std::vector<Node> nodes_;
  std::size_t current_ = 0;
};

struct ValueIterationResult {
  std::vector<std::vector<double>> q;  // [node][action]
  std::vector<std::size_t> policy;     // greedy action per node, earliest on ties
  int iterations = 0;
};

ValueIterationResult value_iteration(const TabularMdp& mdp, double lambda, double discount,
                                     double tolerance = 1e-12);

// LOW (NORMAL, score 2), HIGH (NORMAL, score 6), near-collapse (FRAGILE,
// CRITICAL, score 9). "observe" drifts one state worse; "harden" (cost 0.1)
// moves one state better.
TabularMdp frozen_test_mdp();

// ---------------------------------------------------------------- JSON

Json to_json(const Intervention& intervention);
Json to_json(const Catalog& catalog);
Catalog catalog_from_json(const Json& j, const std::string& path);
Json to_json(const AgentConfig& config);
AgentConfig agent_config_from_json(const Json& j, const std::string& path);
Json to_json(const QTable& table);
QTable qtable_from_json(const Json& j, const std::string& path = "model");
Json to_json(const TabularMdp& mdp, double lambda, double discount);
struct MdpFixture {
  TabularMdp mdp;
  double lambda;
  double discount;
};
MdpFixture mdp_from_json(const Json& j, const std::string& path = "mdp");
Json to_json(const Recommendation& rec);

}  // namespace ciim
