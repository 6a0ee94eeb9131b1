#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ciim/core_model.hpp"
#include "ciim/json_io.hpp"

namespace ciim {

enum class RiskLevel : std::uint8_t { kLow, kMedium, kHigh, kCritical };

inline constexpr std::size_t kLevelCount = 4;

std::string_view to_string(RiskLevel level);
RiskLevel risk_level_from_string(std::string_view name);

// Lower bounds of MEDIUM, HIGH and CRITICAL on the [0, 10] scale. Intervals are
// closed below.
struct LevelCutpoints {
  double medium = 2.5;
  double high = 5.0;
  double critical = 7.5;
};

// Deterministic oracle. COLLAPSE forces CRITICAL regardless of score.
RiskLevel threshold_classify(double normalized_score, Regime regime, const LevelCutpoints& cuts = {});

inline constexpr std::size_t kFeatureCount = 4;
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "score", "trend", "resilience", "sensitivity"};

struct Features {
  double score = 0.0;        // normalized [0, 10]; collapse pinned to 10
  double trend = 0.0;        // score slope over the last 3 ticks
  double resilience = 1.0;
  double sensitivity = 0.0;  // a*T*V*E / R^2, finite even in collapse

  std::array<double, kFeatureCount> as_array() const { return {score, trend, resilience, sensitivity}; }
};

// Slope over the trailing three scores (oldest first); fewer points give the
// one-step difference or zero.
double score_trend(std::span<const double> recent_scores);

// Feature vector for the state a CiimOutput was evaluated on.
Features features_of(const RiskState& evaluated, const CiimOutput& output, const KernelParams& params,
                     double trend);

struct Stump {
  std::size_t feature = 0;
  double threshold = 0.0;
  std::array<double, kLevelCount> left{};   // votes when x[feature] < threshold
  std::array<double, kLevelCount> right{};  // votes otherwise
};

struct StumpEnsemble {
  std::array<double, kLevelCount> base_scores{};
  std::vector<Stump> stumps;

  std::array<double, kLevelCount> scores(const Features& x) const;
  // Argmax of scores; ties go to the lower level.
  RiskLevel predict(const Features& x) const;
};

struct LabeledExample {
  Features features;
  RiskLevel label = RiskLevel::kLow;
};

struct BoostConfig {
  int rounds = 25;
  double l2 = 1.0;         // leaf regularization
  double subsample = 1.0;  // row fraction used to pick each split
  std::uint64_t seed = 0;
};

// Stage-wise additive stumps on one-vs-rest logistic loss. Each round adds
// one split shared by all four classes with per-class Newton leaf values,
// shrunk by backtracking until the training loss does not increase.
// Throws std::invalid_argument for fewer than 4 examples or a single class.
StumpEnsemble train_stumps(std::span<const LabeledExample> data, const BoostConfig& config);

double training_loss(const StumpEnsemble& ensemble, std::span<const LabeledExample> data);
double training_accuracy(const StumpEnsemble& ensemble, std::span<const LabeledExample> data);

struct Classification {
  RiskLevel level = RiskLevel::kLow;     // ensemble vote, CRITICAL under collapse
  RiskLevel oracle = RiskLevel::kLow;    // threshold_classify on the same state
  bool divergence = false;               // level != oracle
};

Classification classify(const StumpEnsemble& ensemble, const Features& x, Regime regime,
                        const LevelCutpoints& cuts = {});

// Random valid states labelled by the threshold oracle.
std::vector<LabeledExample> synthetic_labeled_states(std::size_t count, std::uint64_t seed,
                                                     const KernelParams& params = {});

Json to_json(const StumpEnsemble& ensemble);
StumpEnsemble stump_ensemble_from_json(const Json& j, const std::string& path = "model");

}  // namespace ciim
