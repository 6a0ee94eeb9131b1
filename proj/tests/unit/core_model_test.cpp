#include "ciim/core_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ciim/errors.hpp"
#include "test_support.hpp"

namespace ciim {
namespace {

using testing::kernel_oracle;
using testing::random_params;
using testing::random_state;

RiskState make_state(double t, double v, double e, double r) {
  RiskState s;
  s.threat = t;
  s.vulnerability = v;
  s.exposure = e;
  s.resilience = r;
  return s;
}

KernelParams make_params(double a, double alpha) {
  KernelParams p;
  p.a = a;
  p.alpha = alpha;
  return p;
}

TEST(AggregatePerturbation, EqualSourcesAreWeightIndependent) {
  const PerturbationSources s{0.5, 0.5, 0.5, 0.5};
  EXPECT_NEAR(aggregate_perturbation(s, kDefaultSourceWeights), 0.5, 1e-15);
  EXPECT_NEAR(aggregate_perturbation(s, {0.25, 0.25, 0.25, 0.25}), 0.5, 1e-15);
  EXPECT_NEAR(aggregate_perturbation(s, {1.0, 0.0, 0.0, 0.0}), 0.5, 1e-15);
}

TEST(AggregatePerturbation, SingleSource) {
  EXPECT_DOUBLE_EQ(aggregate_perturbation({1, 0, 0, 0}, {0.4, 0.3, 0.2, 0.1}), 0.4);
}

TEST(AggregatePerturbation, ZeroSources) {
  EXPECT_EQ(aggregate_perturbation({0, 0, 0, 0}, kDefaultSourceWeights), 0.0);
}

TEST(AggregatePerturbation, RejectsBadWeights) {
  EXPECT_THROW(aggregate_perturbation({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}), ConfigError);
  EXPECT_THROW(aggregate_perturbation({0.5, 0.5, 0.5, 0.5}, {1.2, -0.2, 0.0, 0.0}), ConfigError);
}

TEST(ClassifyRegime, DefaultThresholds) {
  const KernelParams p;
  EXPECT_EQ(classify_regime(0.5, p), Regime::kNormal);
  EXPECT_EQ(classify_regime(0.05, p), Regime::kFragile);
  EXPECT_EQ(classify_regime(0.005, p), Regime::kCollapse);
  EXPECT_EQ(classify_regime(0.01, p), Regime::kCollapse);
  EXPECT_EQ(classify_regime(0.15, p), Regime::kFragile);
  EXPECT_EQ(classify_regime(1.0, p), Regime::kNormal);
}

TEST(ClassifyRegime, RejectsOutsideUnitInterval) {
  const KernelParams p;
  EXPECT_THROW(classify_regime(0.0, p), DomainError);
  EXPECT_THROW(classify_regime(-0.1, p), DomainError);
  EXPECT_THROW(classify_regime(1.01, p), DomainError);
  EXPECT_THROW(classify_regime(std::numeric_limits<double>::quiet_NaN(), p), DomainError);
}

TEST(EvalCiim, IdentityCase) {
  auto out = eval_ciim(make_state(1, 1, 1, 1), 0.9, make_params(1.0, 0.0));
  ASSERT_TRUE(std::holds_alternative<Projection>(out));
  const auto& p = std::get<Projection>(out);
  EXPECT_DOUBLE_EQ(p.value, 1.0);
  EXPECT_EQ(p.regime, Regime::kNormal);
}

TEST(EvalCiim, WorkedExample) {
  // 2 * 0.5 * 0.8 * 0.5 / 0.4 + 0.3 * 0.6 = 1.0 + 0.18
  auto out = eval_ciim(make_state(0.5, 0.8, 0.5, 0.4), 0.6, make_params(2.0, 0.3));
  const auto& p = std::get<Projection>(out);
  EXPECT_NEAR(p.value, 1.18, 1e-12);
  EXPECT_NEAR(p.attribution.threat_term, 1.0, 1e-12);
  EXPECT_NEAR(p.attribution.perturbation_term, 0.18, 1e-12);
  EXPECT_NEAR(p.sensitivity, 0.4 / (0.4 * 0.4), 1e-12);
}

TEST(EvalCiim, ZeroThreatAnnihilatesProductTerm) {
  auto out = eval_ciim(make_state(0, 0.5, 0.5, 0.5), 0.7, make_params(1.0, 0.2));
  const auto& p = std::get<Projection>(out);
  EXPECT_NEAR(p.value, 0.14, 1e-12);
  EXPECT_EQ(p.attribution.threat_term, 0.0);
  EXPECT_EQ(p.sensitivity, 0.0);
}

TEST(EvalCiim, CollapseBelowRmin) {
  auto out = eval_ciim(make_state(0.5, 0.5, 0.5, 0.005), 0.5, make_params(1.0, 0.3));
  ASSERT_TRUE(std::holds_alternative<Collapse>(out));
  EXPECT_EQ(std::get<Collapse>(out).resilience, 0.005);
  EXPECT_EQ(regime_of(out), Regime::kCollapse);
}

TEST(EvalCiim, RejectsInvalidInputs) {
  const KernelParams p;
  EXPECT_THROW(eval_ciim(make_state(1.5, 0.5, 0.5, 0.5), 0.5, p), DomainError);
  EXPECT_THROW(eval_ciim(make_state(0.5, 0.5, 0.5, 0.0), 0.5, p), DomainError);
  EXPECT_THROW(eval_ciim(make_state(0.5, 0.5, 0.5, 0.5), 1.5, p), DomainError);
  KernelParams bad;
  bad.r_fragile = 0.005;
  EXPECT_THROW(eval_ciim(make_state(0.5, 0.5, 0.5, 0.5), 0.5, bad), ConfigError);
}

TEST(EvalCiim, AttributionMatchesSourcesWhenPIsTheirAggregate) {
  RiskState s = make_state(0.3, 0.6, 0.9, 0.7);
  s.sources = {0.2, 0.9, 0.4, 0.6};
  const KernelParams params;
  const auto& p = std::get<Projection>(assess(s, params));
  const auto src = s.sources.as_array();
  for (std::size_t i = 0; i < kSourceCount; ++i) {
    EXPECT_NEAR(p.attribution.source_contributions[i],
                params.alpha * params.perturbation_weights[i] * src[i], 1e-15);
  }
}

TEST(NormalizeScore, FixedPoints) {
  EXPECT_EQ(normalize_score(0.0), 0.0);
  EXPECT_NEAR(normalize_score(1.0), 5.0, 1e-12);
  EXPECT_NEAR(normalize_score(2.0), 7.5, 1e-12);
  EXPECT_LE(normalize_score(1e6), 10.0);
  EXPECT_NEAR(normalize_score(1e6), 10.0, 1e-12);
  EXPECT_EQ(normalize_score(std::numeric_limits<double>::infinity()), 10.0);
  EXPECT_THROW(normalize_score(-1e-9), DomainError);
}

TEST(NormalizeScore, StrictlyIncreasing) {
  double prev = normalize_score(0.0);
  for (double x = 0.01; x < 30.0; x += 0.01) {
    const double y = normalize_score(x);
    ASSERT_GT(y, prev) << x;
    prev = y;
  }
}

TEST(StaticBaseline, IgnoresResilienceAndContext) {
  RiskState a = make_state(0.7, 0.8, 0.9, 0.9);
  RiskState b = a;
  b.resilience = 0.011;
  b.sources = {1, 1, 1, 1};
  EXPECT_EQ(static_baseline(a), static_baseline(b));
  EXPECT_EQ(static_baseline(make_state(1, 1, 1, 0.5)), 10.0);
  EXPECT_EQ(static_baseline(make_state(0, 1, 1, 0.5)), 0.0);
}

// ------------------------------------------------------------ properties

TEST(KernelProperties, MatchesDirectOracle) {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const KernelParams params = random_params(rng);
    const RiskState s = random_state(rng, params.r_min);
    const double p = rng.uniform01();
    const auto& out = std::get<Projection>(eval_ciim(s, p, params));
    const double expect =
        kernel_oracle(params.a, s.threat, s.vulnerability, s.exposure, s.resilience, params.alpha, p);
    ASSERT_NEAR(out.value, expect, 1e-12 * std::max(1.0, std::abs(expect)));
  }
}

TEST(KernelProperties, Monotonicity) {
  Rng rng(12);
  const KernelParams params;
  auto value = [&](const RiskState& s, double p) { return std::get<Projection>(eval_ciim(s, p, params)).value; };
  for (int i = 0; i < 2000; ++i) {
    RiskState lo = random_state(rng, params.r_min);
    double p = rng.uniform01();
    const double base = value(lo, p);
    RiskState hi = lo;
    hi.threat = rng.uniform(lo.threat, 1.0);
    EXPECT_GE(value(hi, p), base);
    hi = lo;
    hi.vulnerability = rng.uniform(lo.vulnerability, 1.0);
    EXPECT_GE(value(hi, p), base);
    hi = lo;
    hi.exposure = rng.uniform(lo.exposure, 1.0);
    EXPECT_GE(value(hi, p), base);
    EXPECT_GE(value(lo, rng.uniform(p, 1.0)), base);
    hi = lo;
    hi.resilience = rng.uniform(lo.resilience, 1.0);
    EXPECT_LE(value(hi, p), base);
  }
}

TEST(KernelProperties, NoSmoothingAcrossRmin) {
  const KernelParams params;
  for (int k = -200; k <= 200; ++k) {
    const double r = params.r_min * (1.0 + k * 1e-3);
    auto out = eval_ciim(make_state(0.5, 0.5, 0.5, r), 0.5, params);
    EXPECT_EQ(is_collapse(out), r <= params.r_min) << r;
  }
}

TEST(KernelProperties, SingularityGrowth) {
  const KernelParams params = make_params(1.0, 0.3);
  const RiskState base = make_state(0.5, 0.5, 0.5, 1.0);
  const double c = 0.125;
  double prev = 0.0;
  for (double r = 1.0; r > params.r_min; r = params.r_min + (r - params.r_min) / 2) {
    RiskState s = base;
    s.resilience = r;
    const auto& p = std::get<Projection>(eval_ciim(s, 0.0, params));
    EXPECT_GE(p.value, c / r);
    EXPECT_GT(p.value, prev);
    prev = p.value;
    if (r - params.r_min < 1e-9) break;
  }
  RiskState s = base;
  s.resilience = params.r_min + 1e-6;
  const double bound = 12.0;  // c / r_min = 12.5
  EXPECT_GT(std::get<Projection>(eval_ciim(s, 0.0, params)).value, bound);
}

TEST(KernelProperties, AttributionCompleteness) {
  Rng rng(13);
  for (int i = 0; i < 2000; ++i) {
    const KernelParams params = random_params(rng);
    const RiskState s = random_state(rng, params.r_min);
    const double p = rng.uniform01();
    const auto& out = std::get<Projection>(eval_ciim(s, p, params));
    double sum = 0.0;
    for (double x : out.attribution.source_contributions) sum += x;
    ASSERT_NEAR(out.attribution.perturbation_term, sum, 1e-9);
    ASSERT_NEAR(out.value, out.attribution.threat_term + sum, 1e-9);
  }
}

TEST(KernelProperties, RegimeIndependentOfA) {
  Rng rng(14);
  for (int i = 0; i < 500; ++i) {
    const RiskState s = random_state(rng);
    KernelParams p1 = make_params(1.0, 0.3);
    KernelParams p2 = make_params(rng.uniform(1e-3, 1e3), 0.3);
    EXPECT_EQ(regime_of(eval_ciim(s, 0.5, p1)), regime_of(eval_ciim(s, 0.5, p2)));
  }
}

TEST(KernelProperties, Deterministic) {
  Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    const RiskState s = random_state(rng);
    const KernelParams params;
    EXPECT_EQ(to_json(eval_ciim(s, 0.3, params)).dump(), to_json(eval_ciim(s, 0.3, params)).dump());
  }
}

// ------------------------------------------------------------ JSON

TEST(CoreJson, CollapseHasNoNumericIndex) {
  const auto j = to_json(eval_ciim(make_state(0.5, 0.5, 0.5, 0.001), 0.5, KernelParams{}));
  EXPECT_EQ(j["kind"], "collapse");
  EXPECT_FALSE(j.contains("value"));
  EXPECT_FALSE(j.contains("normalized_score"));
  EXPECT_FALSE(j.contains("sensitivity"));
}

TEST(CoreJson, StateRoundTrip) {
  Rng rng(16);
  for (int i = 0; i < 100; ++i) {
    const RiskState s = random_state(rng);
    EXPECT_EQ(risk_state_from_json(Json::parse(to_json(s).dump()), "state"), s);
  }
}

TEST(CoreJson, ParamErrorsCarryPath) {
  Json j = Json::parse(R"({"a": 1, "perturbation_weights": [0.5, 0.5, 0.5, 0.5]})");
  try {
    kernel_params_from_json(j, "config.kernel");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "config.kernel.perturbation_weights");
  }
  Json s = Json::parse(R"({"threat": 2, "vulnerability": 0.5, "exposure": 0.5, "resilience": 0.5})");
  try {
    risk_state_from_json(s, "state");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "state.threat");
  }
}

}  // namespace
}  // namespace ciim
