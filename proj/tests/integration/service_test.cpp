#include "ciim/service.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <set>
#include <thread>

namespace ciim {
namespace {

namespace fs = std::filesystem;

const char* kConfig = R"({
  "id": "org1",
  "seed": 5,
  "initial": {"threat": 0.5, "vulnerability": 0.5, "exposure": 0.5, "resilience": 0.3,
              "sources": {"d_hist": 0.2, "d_real": 0.3, "b_user": 0.1, "a_patterns": 0.2}},
  "dynamics": {"attack": {"rate": 0.2, "threat": 0.1, "d_real": 0.2}, "resilience_decay": 0.02, "noise": 0.01},
  "agent": {"episodes": 300}
})";

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("ciim-") + info->name() + "-" + std::to_string(::getpid()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
};

Json body_of(const ApiResponse& r) { return Json::parse(r.body); }

TEST_F(ServiceTest, CreateValidatesAndRejectsDuplicates) {
  ScenarioService svc(dir_);
  const ApiResponse ok = svc.create(kConfig);
  EXPECT_EQ(ok.status, 201);
  EXPECT_EQ(body_of(ok)["id"], "org1");
  EXPECT_EQ(body_of(ok)["record"]["tick"], 0);
  EXPECT_TRUE(fs::exists(dir_ / "org1.jsonl"));
  EXPECT_EQ(svc.create(kConfig).status, 409);

  const ApiResponse bad = svc.create(R"({"initial": {"threat": 0.5, "vulnerability": 0.5, "exposure": 7, "resilience": 1}})");
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(body_of(bad)["path"], "initial.exposure");
  EXPECT_EQ(svc.create("{nope").status, 400);
  EXPECT_EQ(svc.create(R"({"id": "../etc", "initial": {"threat": 0, "vulnerability": 0, "exposure": 0, "resilience": 1}})").status,
            400);

  const ApiResponse anon = svc.create(R"({"initial": {"threat": 0, "vulnerability": 0, "exposure": 0, "resilience": 1}})");
  EXPECT_EQ(anon.status, 201);
  EXPECT_FALSE(body_of(anon)["id"].get<std::string>().empty());
}

TEST_F(ServiceTest, StepContract) {
  ScenarioService svc(dir_);
  svc.create(kConfig);
  const ApiResponse r = svc.step("org1", R"({"action": "observe"})");
  ASSERT_EQ(r.status, 200);
  const Json rec = body_of(r);
  EXPECT_EQ(rec["tick"], 1);
  EXPECT_EQ(rec["action"], "observe");
  EXPECT_TRUE(rec["reward"].is_number());
  EXPECT_TRUE(body_of(svc.step("org1", ""))["reward"].is_null());
  EXPECT_EQ(svc.step("nobody", "").status, 404);
  EXPECT_EQ(svc.step("org1", R"({"action": "reboot"})").status, 422);
  EXPECT_EQ(body_of(svc.state("org1"))["tick"], 2);
}

TEST_F(ServiceTest, CollapseOnTheWireHasNoScore) {
  ScenarioService svc(dir_);
  svc.create(R"({"id": "c", "initial": {"threat": 0.9, "vulnerability": 0.9, "exposure": 0.9, "resilience": 0.05},
                 "dynamics": {"resilience_decay": 0.05}})");
  const Json rec = body_of(svc.step("c", ""));
  EXPECT_EQ(rec["output"]["kind"], "collapse");
  EXPECT_FALSE(rec["output"].contains("value"));
  EXPECT_FALSE(rec["output"].contains("normalized_score"));
  const Json attr = body_of(svc.attribution("c"));
  EXPECT_EQ(attr["output"]["regime"], "COLLAPSE");
  EXPECT_FALSE(attr["output"].contains("value"));
}

TEST_F(ServiceTest, AttributionSumsToPerturbationTerm) {
  ScenarioService svc(dir_);
  svc.create(kConfig);
  for (int k = 0; k < 5; ++k) {
    const Json out = body_of(svc.attribution("org1"))["output"];
    ASSERT_EQ(out["kind"], "projection");
    double sum = 0.0;
    ASSERT_EQ(out["attribution"]["source_contributions"].size(), 4u);
    for (const auto& [name, v] : out["attribution"]["source_contributions"].items()) sum += v.get<double>();
    EXPECT_NEAR(sum, out["attribution"]["perturbation_term"].get<double>(), 1e-9);
    EXPECT_NEAR(out["value"].get<double>(),
                out["attribution"]["threat_term"].get<double>() + out["attribution"]["perturbation_term"].get<double>(),
                1e-9);
    svc.step("org1", "");
  }
  EXPECT_EQ(svc.attribution("nobody").status, 404);
}

TEST_F(ServiceTest, WhatIfLeavesStateUntouched) {
  ScenarioService svc(dir_);
  svc.create(R"({"id": "w", "initial": {"threat": 0.5, "vulnerability": 0.5, "exposure": 0.5, "resilience": 0.009}})");
  const std::string before = body_of(svc.state("w"))["state_hash"];
  const ApiResponse r = svc.whatif("w", R"({"action": "harden"})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(body_of(r)["whatif"]["output"]["regime"], "FRAGILE");
  EXPECT_EQ(body_of(r)["state_hash"], before);
  EXPECT_EQ(body_of(svc.state("w"))["state_hash"], before);
  EXPECT_EQ(svc.whatif("w", R"({"action": "reboot"})").status, 422);
  EXPECT_EQ(svc.whatif("w", "{}").status, 400);
  EXPECT_EQ(svc.whatif("nobody", R"({"action": "harden"})").status, 404);
}

TEST_F(ServiceTest, NormsAreValidatedReadBackAndTraced) {
  ScenarioService svc(dir_);
  svc.create(kConfig);
  EXPECT_EQ(svc.norms("org1", R"({"perturbation_weights": [0.5, 0.5, 0.5, 0.5]})").status, 422);
  EXPECT_EQ(svc.norms("org1", R"({"lambda": -2})").status, 422);
  EXPECT_EQ(svc.norms("nobody", R"({"lambda": 0})").status, 404);
  const ApiResponse ok = svc.norms("org1", R"({"lambda": 0, "perturbation_weights": [0.1, 0.2, 0.3, 0.4]})");
  ASSERT_EQ(ok.status, 200);
  EXPECT_EQ(body_of(ok)["lambda"], 0.0);
  EXPECT_EQ(body_of(ok)["perturbation_weights"], Json::parse("[0.1, 0.2, 0.3, 0.4]"));
  EXPECT_EQ(body_of(svc.state("org1"))["perturbation_weights"], Json::parse("[0.1, 0.2, 0.3, 0.4]"));
  EXPECT_EQ(body_of(svc.recommendation("org1"))["recommendation"]["lambda"], 0.0);
  const std::string trace = svc.trace("org1").body;
  EXPECT_NE(trace.find(R"({"event":"norms","tick":0,"lambda":0.0)"), std::string::npos);
}

TEST_F(ServiceTest, RecommendationListsEveryAction) {
  ScenarioService svc(dir_);
  svc.create(kConfig);
  const ApiResponse r = svc.recommendation("org1");
  ASSERT_EQ(r.status, 200);
  const Json rec = body_of(r)["recommendation"];
  EXPECT_EQ(rec["rationale"].size(), 4u);
  EXPECT_EQ(rec["lambda"], 1.0);
  EXPECT_EQ(svc.recommendation("nobody").status, 404);
}

TEST_F(ServiceTest, TraceIsAppendOnly) {
  ScenarioService svc(dir_);
  svc.create(kConfig);
  std::string previous = svc.trace("org1").body;
  for (const char* body : {R"({"action": "patch"})", "", R"({"action": "reboot"})"}) {
    svc.step("org1", body);
    svc.whatif("org1", R"({"action": "harden"})");
    svc.recommendation("org1");
    const std::string now = svc.trace("org1").body;
    EXPECT_EQ(now.compare(0, previous.size(), previous), 0);
    previous = now;
  }
  EXPECT_EQ(svc.trace("org1").content_type, "application/x-ndjson");
}

TEST_F(ServiceTest, RestartReconstructsIdenticalState) {
  std::string hash, trace;
  {
    ScenarioService svc(dir_);
    svc.create(kConfig);
    svc.step("org1", R"({"action": "harden"})");
    svc.norms("org1", R"({"lambda": 0.5})");
    for (int k = 0; k < 20; ++k) svc.step("org1", k % 3 ? "" : R"({"action": "patch"})");
    hash = body_of(svc.state("org1"))["state_hash"];
    trace = svc.trace("org1").body;
  }
  ScenarioService restarted(dir_);
  EXPECT_TRUE(restarted.recovery_errors().empty());
  EXPECT_EQ(restarted.ids(), std::vector<std::string>{"org1"});
  EXPECT_EQ(body_of(restarted.state("org1"))["state_hash"], hash);
  EXPECT_EQ(restarted.trace("org1").body, trace);
  EXPECT_EQ(restarted.create(kConfig).status, 409);

  std::ofstream(dir_ / "broken.jsonl") << "{\"tick\":0}\n";
  ScenarioService again(dir_);
  EXPECT_EQ(again.recovery_errors().size(), 1u);
  EXPECT_EQ(again.ids(), std::vector<std::string>{"org1"});
}

TEST_F(ServiceTest, ConcurrentStepsAreSerialized) {
  ScenarioService svc(dir_);
  svc.create(kConfig);
  svc.create(R"({"id": "other", "initial": {"threat": 0.1, "vulnerability": 0.1, "exposure": 0.1, "resilience": 1}})");
  std::vector<std::uint64_t> ticks;
  std::mutex m;
  std::vector<std::thread> threads;
  for (int w = 0; w < 4; ++w) {
    threads.emplace_back([&, w] {
      for (int k = 0; k < 25; ++k) {
        const Json rec = body_of(svc.step(w % 2 ? "org1" : "other", ""));
        if (w % 2) {
          std::lock_guard lock(m);
          ticks.push_back(rec["tick"]);
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  std::sort(ticks.begin(), ticks.end());
  for (std::size_t i = 0; i < ticks.size(); ++i) EXPECT_EQ(ticks[i], i + 1);
  EXPECT_EQ(body_of(svc.state("other"))["tick"], 50);
}

TEST_F(ServiceTest, HttpRoutes) {
  ScenarioService svc(dir_);
  httplib::Server server;
  mount(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/scenarios", kConfig, "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(client.Post("/scenarios", kConfig, "application/json")->status, 409);
  EXPECT_EQ(client.Post("/scenarios/org1/step", R"({"action":"observe"})", "application/json")->status, 200);
  EXPECT_EQ(client.Post("/scenarios/org1/step", R"({"action":"nope"})", "application/json")->status, 422);
  EXPECT_EQ(client.Post("/scenarios/ghost/step", "", "application/json")->status, 404);
  EXPECT_EQ(client.Post("/scenarios/org1/whatif", R"({"action":"isolate"})", "application/json")->status, 200);
  EXPECT_EQ(client.Get("/scenarios/org1/state")->status, 200);
  EXPECT_EQ(client.Get("/scenarios/org1/attribution")->status, 200);
  EXPECT_EQ(client.Get("/scenarios/org1/recommendation")->status, 200);
  EXPECT_EQ(client.Put("/scenarios/org1/norms", R"({"lambda":0})", "application/json")->status, 200);
  EXPECT_EQ(client.Put("/scenarios/org1/norms", R"({"perturbation_weights":[1,1,1,1]})", "application/json")->status,
            422);
  auto trace = client.Get("/scenarios/org1/trace");
  ASSERT_TRUE(trace);
  EXPECT_EQ(trace->get_header_value("Content-Type"), "application/x-ndjson");
  EXPECT_EQ(std::count(trace->body.begin(), trace->body.end(), '\n'), 3);
  EXPECT_EQ(client.Options("/scenarios/org1/step")->status, 204);

  server.stop();
  thread.join();
}

}  // namespace
}  // namespace ciim
