#include "ciim/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ciim/errors.hpp"
#include "ciim/service.hpp"

namespace ciim::cli {

namespace {

std::string read_text(const std::string& path, const std::string& label) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'", label);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string joined(const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + '\n';
  return text;
}

// Writes to `path`, or to `out` when the path is empty.
void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ConfigError("cannot write '" + path + "'", "--out");
  file << text;
}

struct TraceData {
  KernelParams kernel;
  std::vector<RiskState> states;     // record states in tick order
  std::vector<RiskState> forecasts;  // forecast states in tick order
};

TraceData read_trace(const std::string& path) {
  const auto lines = split_lines(read_text(path, "--trace"));
  TraceData d;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string p = "trace[" + std::to_string(n) + "]";
    Json j;
    try {
      j = Json::parse(lines[n]);
    } catch (const Json::parse_error&) {
      throw ConfigError("line is not JSON", p);
    }
    if (j.contains("event")) continue;
    if (n == 0 && j.contains("scenario")) {
      d.kernel = scenario_config_from_json(json_io::require(j["scenario"], "config", p), p + ".scenario.config").kernel;
    }
    d.states.push_back(risk_state_from_json(json_io::require(j, "state", p), p + ".state"));
    const Json& f = json_io::require(j, "forecast", p);
    d.forecasts.push_back(risk_state_from_json(json_io::require(f, "state", p + ".forecast"), p + ".forecast.state"));
  }
  if (d.states.empty()) throw ConfigError("trace has no records", "--trace");
  return d;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config;
  std::size_t ticks = 100;
  std::optional<std::uint64_t> seed;
  std::string policy = "none";
  std::string out;
};

int simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  ScenarioConfig config = scenario_config_from_json(json_io::read_file(a.config, "--config"));
  if (a.seed) config.seed = *a.seed;
  const Policy policy = policy_from_string(a.policy);
  if (policy == Policy::kInteractive) throw ConfigError("interactive runs go through the service", "--policy");
  const auto records = run(config, a.ticks, policy);
  emit(joined(trace_lines(records, config, policy)), a.out, out);
  std::size_t collapses = 0;
  for (const auto& r : records) collapses += is_collapse(r.output) ? 1 : 0;
  err << "simulated " << records.size() << " ticks; collapse reported on " << collapses << "\n";
  return kOk;
}

// ---------------------------------------------------------------- score

int score(const std::string& path, std::ostream& out) {
  const Json doc = json_io::read_file(path, "--state");
  json_io::require_object(doc, "");
  const bool wrapped = doc.contains("state");
  const RiskState state = risk_state_from_json(wrapped ? doc["state"] : doc, wrapped ? "state" : "");
  KernelParams params;
  if (auto it = doc.find("kernel"); wrapped && it != doc.end()) params = kernel_params_from_json(*it, "kernel");
  const double p = wrapped && doc.contains("perturbation")
                       ? json_io::number_in(doc, "perturbation", 0.0, 1.0, "")
                       : aggregate_perturbation(state.sources, params.perturbation_weights);
  out << to_json(eval_ciim(state, p, params)).dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string what;
  std::string trace;
  std::uint64_t seed = 0;
  std::string out;
};

int train_forecaster_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.trace.empty()) throw ConfigError("a trace is required", "--trace");
  const TraceData d = read_trace(a.trace);
  TrainConfig cfg;
  cfg.seed = a.seed;
  const TrainResult r = train_forecaster(SeriesWindow::from_states(d.states), cfg);
  emit(to_json(r.params).dump() + "\n", a.out, out);
  err << "one-step MSE: " << r.final_loss << " (initial " << r.initial_loss << ")\n";
  return r.final_loss <= r.initial_loss ? kOk : kCheckFailed;
}

int train_classifier_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<LabeledExample> data;
  if (a.trace.empty()) {
    data = synthetic_labeled_states(500, a.seed);
  } else {
    const TraceData d = read_trace(a.trace);
    std::vector<double> scores;
    for (const RiskState& s : d.forecasts) {
      const CiimOutput o = eval_ciim(s, aggregate_perturbation(s.sources, d.kernel.perturbation_weights), d.kernel);
      scores.push_back(pinned_score(o));
      const std::size_t from = scores.size() > 3 ? scores.size() - 3 : 0;
      const double trend = score_trend(std::span(scores).subspan(from));
      data.push_back({features_of(s, o, d.kernel, trend), threshold_classify(scores.back(), regime_of(o))});
    }
  }
  BoostConfig cfg;
  cfg.seed = a.seed;
  StumpEnsemble e;
  try {
    e = train_stumps(data, cfg);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what(), "--trace");
  }
  const double agreement = training_accuracy(e, data);
  emit(to_json(e).dump() + "\n", a.out, out);
  err << "training agreement: " << agreement << " on " << data.size() << " examples\n";
  return agreement >= 0.95 ? kOk : kCheckFailed;
}

int train_agent_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.trace.empty()) throw ConfigError("an MDP fixture or trace is required", "--trace");
  const std::string text = read_text(a.trace, "--trace");
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error&) {
    doc = nullptr;  // several lines: a trace
  }

  if (doc.is_object() && doc.value("format", "") == "ciim.mdp") {
    MdpFixture f = mdp_from_json(doc, "mdp");
    AgentConfig cfg;
    cfg.lambda = f.lambda;
    cfg.discount = f.discount;
    cfg.episodes = 10'000;
    cfg.seed = a.seed;
    const QTable table = train_agent(f.mdp, cfg);
    const auto vi = value_iteration(f.mdp, f.lambda, f.discount);
    bool matches = true;
    double worst = 0.0;
    for (std::size_t n = 0; n < f.mdp.nodes().size(); ++n) {
      const DiscreteState s = f.mdp.nodes()[n].state;
      matches = matches && table.greedy(s) == vi.policy[n];
      for (std::size_t k = 0; k < table.action_count(); ++k) worst = std::max(worst, std::abs(table.q(s, k) - vi.q[n][k]));
    }
    emit(to_json(table).dump() + "\n", a.out, out);
    err << "policy matches oracle: " << (matches ? "true" : "false") << "\n";
    err << "max |Q - Q*|: " << worst << "\n";
    return matches ? kOk : kCheckFailed;
  }

  const auto lines = split_lines(text);
  const Json first = lines.empty() ? Json() : Json::parse(lines[0], nullptr, false);
  if (!first.is_object() || !first.contains("scenario")) {
    throw ConfigError("expected an MDP fixture or a trace with a scenario header", "--trace");
  }
  ScenarioConfig config = scenario_config_from_json(json_io::require(first["scenario"], "config", "scenario"),
                                                    "scenario.config");
  config.agent.seed = a.seed;
  ScenarioEnvironment env(config);
  const QTable table = train_agent(env, config.agent);
  emit(to_json(table).dump() + "\n", a.out, out);
  err << "trained " << config.agent.episodes << " episodes on scenario '" << config.id << "'\n";
  return kOk;
}

// ---------------------------------------------------------------- replay

int replay_cmd(const std::string& path, std::ostream& err) {
  const std::string text = read_text(path, "--trace");
  const auto lines = split_lines(text);
  const std::string regenerated = joined(replay(lines).lines);
  if (regenerated == text) {
    err << "trace reproduced byte-for-byte: " << lines.size() << " lines\n";
    return kOk;
  }
  const auto again = split_lines(regenerated);
  std::size_t n = 0;
  while (n < lines.size() && n < again.size() && lines[n] == again[n]) ++n;
  err << "trace differs from re-simulation at line " << n + 1 << "\n";
  return kCheckFailed;
}

// ---------------------------------------------------------------- serve

int serve_cmd(std::optional<int> port, std::string data_dir, std::ostream& err) {
  if (!port) {
    const char* env = std::getenv("CIIM_PORT");
    try {
      port = env ? std::stoi(env) : 8080;
    } catch (const std::exception&) {
      throw ConfigError("CIIM_PORT is not a number", "CIIM_PORT");
    }
  }
  if (data_dir.empty()) {
    const char* env = std::getenv("CIIM_DATA_DIR");
    data_dir = env ? env : "ciim-data";
  }
  ScenarioService service(data_dir);
  for (const auto& e : service.recovery_errors()) err << "recovery: " << e << "\n";
  err << "serving " << service.ids().size() << " scenarios from " << data_dir << " on 127.0.0.1:" << *port << "\n";
  if (!serve(service, *port)) {
    err << "cannot listen on port " << *port << "\n";
    return kUsageError;
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic risk engine: simulate, score, train, serve, replay", "ciim"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run a scenario and write its trace as JSON Lines");
  simulate_cmd->add_option("--config", sim.config, "Scenario config JSON")->required();
  simulate_cmd->add_option("--ticks", sim.ticks, "Number of records")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--seed", sim.seed, "Override the config seed");
  simulate_cmd->add_option("--policy", sim.policy, "none | agent | scripted")
      ->check(CLI::IsMember({"none", "agent", "scripted"}));
  simulate_cmd->add_option("--out", sim.out, "Trace file (stdout when omitted)");

  std::string state_path;
  auto* score_cmd = app.add_subcommand("score", "Evaluate the kernel on one state");
  score_cmd->add_option("--state", state_path, "State JSON")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a forecaster, classifier or agent");
  train_cmd->add_option("--what", tr.what, "forecaster | classifier | agent")
      ->required()
      ->check(CLI::IsMember({"forecaster", "classifier", "agent"}));
  train_cmd->add_option("--trace", tr.trace, "Trace JSON Lines, or an MDP fixture for the agent");
  train_cmd->add_option("--seed", tr.seed, "Training seed");
  train_cmd->add_option("--out", tr.out, "Model file (stdout when omitted)");

  std::optional<int> port;
  std::string data_dir;
  auto* serve_sub = app.add_subcommand("serve", "Run the HTTP service");
  serve_sub->add_option("--port", port, "Port (default $CIIM_PORT or 8080)");
  serve_sub->add_option("--data-dir", data_dir, "Trace directory (default $CIIM_DATA_DIR or ./ciim-data)");

  std::string replay_path;
  auto* replay_sub = app.add_subcommand("replay", "Re-simulate a trace and compare byte-for-byte");
  replay_sub->add_option("--trace", replay_path, "Trace JSON Lines")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kUsageError;
  }

  try {
    if (simulate_cmd->parsed()) return simulate(sim, out, err);
    if (score_cmd->parsed()) return score(state_path, out);
    if (train_cmd->parsed()) {
      if (tr.what == "forecaster") return train_forecaster_cmd(tr, out, err);
      if (tr.what == "classifier") return train_classifier_cmd(tr, out, err);
      return train_agent_cmd(tr, out, err);
    }
    if (serve_sub->parsed()) return serve_cmd(port, data_dir, err);
    return replay_cmd(replay_path, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

}  // namespace ciim::cli
