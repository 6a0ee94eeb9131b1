#include "ciim/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ciim/errors.hpp"
#include "ciim/rng.hpp"

namespace ciim {

namespace {

constexpr std::array<RiskLevel, kLevelCount> kLevels{RiskLevel::kLow, RiskLevel::kMedium,
                                                      RiskLevel::kHigh, RiskLevel::kCritical};

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using Scores = std::array<double, kLevelCount>;

double example_loss(const Scores& f, RiskLevel label) {
  double loss = 0.0;
  for (std::size_t k = 0; k < kLevelCount; ++k) {
    const double y = static_cast<std::size_t>(label) == k ? 1.0 : 0.0;
    loss += softplus(f[k]) - y * f[k];
  }
  return loss;
}

double mean_loss(const std::vector<Scores>& f, std::span<const LabeledExample> data) {
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) sum += example_loss(f[i], data[i].label);
  return sum / static_cast<double>(data.size());
}

const std::array<double, kLevelCount>& leaf_of(const Stump& s, const Features& x) {
  return x.as_array()[s.feature] < s.threshold ? s.left : s.right;
}

RiskLevel argmax(const Scores& f) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kLevelCount; ++k) {
    if (f[k] > f[best]) best = k;
  }
  return kLevels[best];
}

struct Split {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
  Scores left{}, right{};
};

Split best_split(std::span<const LabeledExample> data, const std::vector<std::size_t>& rows,
                 const std::vector<Scores>& grad, const std::vector<Scores>& hess, double l2) {
  Split best;
  Scores g_total{}, h_total{};
  for (std::size_t i : rows) {
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      g_total[k] += grad[i][k];
      h_total[k] += hess[i][k];
    }
  }
  double parent = 0.0;
  for (std::size_t k = 0; k < kLevelCount; ++k) parent += g_total[k] * g_total[k] / (h_total[k] + l2);

  std::vector<std::size_t> order = rows;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    auto value = [&](std::size_t i) { return data[i].features.as_array()[f]; };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
    Scores g_left{}, h_left{};
    for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
      const std::size_t i = order[pos];
      for (std::size_t k = 0; k < kLevelCount; ++k) {
        g_left[k] += grad[i][k];
        h_left[k] += hess[i][k];
      }
      const double lo = value(i);
      const double hi = value(order[pos + 1]);
      if (!(lo < hi)) continue;
      double gain = -parent;
      for (std::size_t k = 0; k < kLevelCount; ++k) {
        const double gr = g_total[k] - g_left[k];
        const double hr = h_total[k] - h_left[k];
        gain += g_left[k] * g_left[k] / (h_left[k] + l2) + gr * gr / (hr + l2);
      }
      if (!best.found || gain > best.gain) {
        best.found = true;
        best.gain = gain;
        best.feature = f;
        best.threshold = lo + (hi - lo) / 2;
        for (std::size_t k = 0; k < kLevelCount; ++k) {
          best.left[k] = -g_left[k] / (h_left[k] + l2);
          best.right[k] = -(g_total[k] - g_left[k]) / (h_total[k] - h_left[k] + l2);
        }
      }
    }
  }
  return best;
}

}  // namespace

std::string_view to_string(RiskLevel level) {
  switch (level) {
    case RiskLevel::kLow:
      return "LOW";
    case RiskLevel::kMedium:
      return "MEDIUM";
    case RiskLevel::kHigh:
      return "HIGH";
    case RiskLevel::kCritical:
      return "CRITICAL";
  }
  return "LOW";
}

RiskLevel risk_level_from_string(std::string_view name) {
  for (RiskLevel l : kLevels) {
    if (to_string(l) == name) return l;
  }
  throw ConfigError("unknown risk level '" + std::string(name) + "'");
}

RiskLevel threshold_classify(double score, Regime regime, const LevelCutpoints& cuts) {
  if (!(score >= 0.0 && score <= 10.0)) throw DomainError("normalized score must lie in [0, 10]");
  if (regime == Regime::kCollapse) return RiskLevel::kCritical;
  if (score >= cuts.critical) return RiskLevel::kCritical;
  if (score >= cuts.high) return RiskLevel::kHigh;
  if (score >= cuts.medium) return RiskLevel::kMedium;
  return RiskLevel::kLow;
}

double score_trend(std::span<const double> s) {
  const std::size_t n = s.size();
  if (n >= 3) return (s[n - 1] - s[n - 3]) / 2.0;
  if (n == 2) return s[1] - s[0];
  return 0.0;
}

Features features_of(const RiskState& evaluated, const CiimOutput& output, const KernelParams& params,
                     double trend) {
  Features x;
  x.score = pinned_score(output);
  x.trend = trend;
  x.resilience = evaluated.resilience;
  if (const auto* p = std::get_if<Projection>(&output)) {
    x.sensitivity = p->sensitivity;
  } else {
    const double r = evaluated.resilience;
    x.sensitivity = params.a * evaluated.threat * evaluated.vulnerability * evaluated.exposure / (r * r);
  }
  return x;
}

Scores StumpEnsemble::scores(const Features& x) const {
  Scores f = base_scores;
  for (const Stump& s : stumps) {
    const auto& leaf = leaf_of(s, x);
    for (std::size_t k = 0; k < kLevelCount; ++k) f[k] += leaf[k];
  }
  return f;
}

RiskLevel StumpEnsemble::predict(const Features& x) const { return argmax(scores(x)); }

StumpEnsemble train_stumps(std::span<const LabeledExample> data, const BoostConfig& config) {
  if (data.size() < 4) throw std::invalid_argument("need at least 4 labelled examples");
  if (config.rounds < 1) throw std::invalid_argument("rounds must be at least 1");
  if (!(config.subsample > 0.0 && config.subsample <= 1.0)) {
    throw std::invalid_argument("subsample must lie in (0, 1]");
  }
  std::array<std::size_t, kLevelCount> counts{};
  for (const auto& ex : data) {
    for (double v : ex.features.as_array()) {
      if (!std::isfinite(v)) throw std::invalid_argument("features must be finite");
    }
    ++counts[static_cast<std::size_t>(ex.label)];
  }
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw std::invalid_argument("labels must cover at least 2 classes");
  }

  const std::size_t n = data.size();
  StumpEnsemble model;
  for (std::size_t k = 0; k < kLevelCount; ++k) {
    const double prior = std::clamp(static_cast<double>(counts[k]) / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    model.base_scores[k] = std::log(prior / (1.0 - prior));
  }

  std::vector<Scores> f(n, model.base_scores);
  std::vector<Scores> grad(n), hess(n);
  Rng rng(config.seed);
  double loss = mean_loss(f, data);

  for (int round = 0; round < config.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < kLevelCount; ++k) {
        const double p = sigmoid(f[i][k]);
        const double y = static_cast<std::size_t>(data[i].label) == k ? 1.0 : 0.0;
        grad[i][k] = p - y;
        hess[i][k] = std::max(p * (1.0 - p), 1e-12);
      }
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (config.subsample >= 1.0 || rng.bernoulli(config.subsample)) rows.push_back(i);
    }
    if (rows.size() < 2) {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }

    const Split split = best_split(data, rows, grad, hess, config.l2);
    if (!split.found) break;

    Stump stump{split.feature, split.threshold, split.left, split.right};
    std::vector<Scores> candidate(n);
    double step = 1.0;
    double next_loss = loss;
    bool improved = false;
    for (int attempt = 0; attempt < 40; ++attempt, step /= 2) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& leaf = data[i].features.as_array()[split.feature] < split.threshold ? split.left : split.right;
        for (std::size_t k = 0; k < kLevelCount; ++k) candidate[i][k] = f[i][k] + step * leaf[k];
      }
      next_loss = mean_loss(candidate, data);
      if (next_loss <= loss) {
        improved = true;
        break;
      }
    }
    if (!improved) break;
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      stump.left[k] *= step;
      stump.right[k] *= step;
    }
    model.stumps.push_back(stump);
    f.swap(candidate);
    loss = next_loss;
  }

  if (model.stumps.empty()) {
    // Nothing improved the prior; keep a neutral stump so the ensemble is never empty.
    model.stumps.push_back(Stump{});
  }
  return model;
}

double training_loss(const StumpEnsemble& ensemble, std::span<const LabeledExample> data) {
  if (data.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& ex : data) sum += example_loss(ensemble.scores(ex.features), ex.label);
  return sum / static_cast<double>(data.size());
}

double training_accuracy(const StumpEnsemble& ensemble, std::span<const LabeledExample> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) hits += ensemble.predict(ex.features) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

Classification classify(const StumpEnsemble& ensemble, const Features& x, Regime regime,
                        const LevelCutpoints& cuts) {
  if (ensemble.stumps.empty()) throw std::invalid_argument("ensemble is untrained");
  Classification c;
  c.oracle = threshold_classify(x.score, regime, cuts);
  c.level = regime == Regime::kCollapse ? RiskLevel::kCritical : ensemble.predict(x);
  c.divergence = c.level != c.oracle;
  return c;
}

std::vector<LabeledExample> synthetic_labeled_states(std::size_t count, std::uint64_t seed,
                                                     const KernelParams& params) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  out.reserve(count);
  const double log_lo = std::log(params.r_min / 5.0);
  for (std::size_t i = 0; i < count; ++i) {
    RiskState s;
    s.threat = rng.uniform01();
    s.vulnerability = rng.uniform01();
    s.exposure = rng.uniform01();
    // Log-uniform resilience so the fragile and collapse bands are populated.
    s.resilience = std::min(1.0, std::exp(rng.uniform(log_lo, 0.0)));
    s.sources = {rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()};
    const CiimOutput out_i = assess(s, params);
    const Features x = features_of(s, out_i, params, rng.uniform(-2.0, 2.0));
    out.push_back({x, threshold_classify(x.score, regime_of(out_i))});
  }
  return out;
}

// ---------------------------------------------------------------- JSON

Json to_json(const StumpEnsemble& e) {
  auto arr = [](const Scores& s) {
    Json a = Json::array();
    for (double v : s) a.push_back(v);
    return a;
  };
  Json j = Json::object();
  j["format"] = "ciim.stumps";
  j["version"] = 1;
  j["features"] = Json::array();
  for (auto name : kFeatureNames) j["features"].push_back(name);
  j["levels"] = Json::array();
  for (RiskLevel l : kLevels) j["levels"].push_back(to_string(l));
  j["base_scores"] = arr(e.base_scores);
  j["stumps"] = Json::array();
  for (const Stump& s : e.stumps) {
    Json rec = Json::object();
    rec["feature"] = s.feature;
    rec["threshold"] = s.threshold;
    rec["left"] = arr(s.left);
    rec["right"] = arr(s.right);
    j["stumps"].push_back(std::move(rec));
  }
  return j;
}

StumpEnsemble stump_ensemble_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  if (json_io::string_or(j, "format", "", path) != "ciim.stumps") {
    throw ConfigError("not a stump ensemble document", json_io::join(path, "format"));
  }
  if (json_io::unsigned_or(j, "version", 0, path) != 1) {
    throw ConfigError("unsupported version", json_io::join(path, "version"));
  }
  auto read = [](const Json& a, const std::string& p) {
    if (!a.is_array() || a.size() != kLevelCount) throw ConfigError("expected 4 numbers", p);
    Scores s{};
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      if (!a[k].is_number() || !std::isfinite(a[k].get<double>())) throw ConfigError("expected a finite number", p);
      s[k] = a[k].get<double>();
    }
    return s;
  };
  StumpEnsemble e;
  e.base_scores = read(json_io::require(j, "base_scores", path), json_io::join(path, "base_scores"));
  const Json& stumps = json_io::require(j, "stumps", path);
  if (!stumps.is_array() || stumps.empty()) throw ConfigError("expected a non-empty array", json_io::join(path, "stumps"));
  for (std::size_t i = 0; i < stumps.size(); ++i) {
    const std::string p = json_io::join(path, "stumps") + "[" + std::to_string(i) + "]";
    Stump s;
    s.feature = json_io::unsigned_or(stumps[i], "feature", kFeatureCount, p);
    if (s.feature >= kFeatureCount) throw ConfigError("feature index out of range", p + ".feature");
    s.threshold = json_io::number(stumps[i], "threshold", p);
    s.left = read(json_io::require(stumps[i], "left", p), p + ".left");
    s.right = read(json_io::require(stumps[i], "right", p), p + ".right");
    e.stumps.push_back(s);
  }
  return e;
}

}  // namespace ciim
