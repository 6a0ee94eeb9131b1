#include "ciim/service.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <regex>

#include "ciim/errors.hpp"

namespace ciim {

namespace {

const std::regex kIdPattern("[A-Za-z0-9_-]{1,64}");

ApiResponse json_response(int status, const Json& body) { return {status, body.dump(), "application/json"}; }

ApiResponse error_response(int status, const std::string& message, const std::string& path = {}) {
  Json j = Json::object();
  j["error"] = message;
  if (!path.empty()) j["path"] = path;
  return json_response(status, j);
}

ApiResponse not_found(const std::string& id) { return error_response(404, "no scenario '" + id + "'"); }

// Empty bodies read as {}.
Json parse_body(const std::string& body) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return Json::object();
  try {
    Json j = Json::parse(body);
    if (!j.is_object()) throw ConfigError("expected a JSON object", "body");
    return j;
  } catch (const Json::parse_error&) {
    throw ConfigError("body is not valid JSON", "body");
  }
}

void append_line(const std::filesystem::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  out << line << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to " + file.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::optional<std::string> action_field(const Json& body) {
  auto it = body.find("action");
  if (it == body.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ConfigError("expected an intervention id", "action");
  return it->get<std::string>();
}

}  // namespace

std::string state_hash(const Scenario& scenario) {
  std::string text = to_json(scenario.state()).dump();
  text += scenario.rng().state();
  text += to_json(scenario.config().kernel).dump();
  text += Json(scenario.config().agent.lambda).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ScenarioService::ScenarioService(std::filesystem::path data_dir) : data_dir_(std::move(data_dir)) {
  std::filesystem::create_directories(data_dir_);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(data_dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    try {
      const auto lines = read_lines(file);
      Replay r = replay(lines);
      if (r.lines != lines) throw ConfigError("replay diverges from the stored trace");
      sessions_.emplace(id, std::make_shared<Session>(std::move(*r.scenario), file));
    } catch (const std::exception& e) {
      recovery_errors_.push_back(file.string() + ": " + e.what());
    }
  }
}

std::vector<std::string> ScenarioService::ids() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, session] : sessions_) out.push_back(id);
  return out;
}

std::shared_ptr<ScenarioService::Session> ScenarioService::find(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::string ScenarioService::next_id() {
  for (;;) {
    std::string id = "s" + std::to_string(++counter_);
    if (!sessions_.count(id) && !std::filesystem::exists(data_dir_ / (id + ".jsonl"))) return id;
  }
}

ApiResponse ScenarioService::create(const std::string& body) {
  ScenarioConfig config;
  try {
    config = scenario_config_from_json(parse_body(body));
  } catch (const ConfigError& e) {
    return error_response(400, e.message(), e.path());
  }
  if (!config.id.empty() && !std::regex_match(config.id, kIdPattern)) {
    return error_response(400, "id must match [A-Za-z0-9_-]{1,64}", "id");
  }

  std::unique_lock lock(registry_mutex_);
  if (config.id.empty()) config.id = next_id();
  const std::filesystem::path file = data_dir_ / (config.id + ".jsonl");
  if (sessions_.count(config.id) || std::filesystem::exists(file)) {
    return error_response(409, "scenario '" + config.id + "' already exists", "id");
  }
  std::optional<Scenario> scenario;
  try {
    scenario.emplace(config);
  } catch (const ConfigError& e) {
    return error_response(400, e.message(), e.path());
  }
  const TraceRecord& first = scenario->last();
  append_line(file, first_trace_line(first, scenario_header(config, Policy::kInteractive, std::nullopt)));
  sessions_.emplace(config.id, std::make_shared<Session>(std::move(*scenario), file));

  Json out = Json::object();
  out["id"] = config.id;
  out["record"] = to_json(first);
  return json_response(201, out);
}

ApiResponse ScenarioService::step(const std::string& id, const std::string& body) {
  auto session = find(id);
  if (!session) return not_found(id);
  std::optional<std::string> action;
  try {
    action = action_field(parse_body(body));
  } catch (const ConfigError& e) {
    return error_response(400, e.message(), e.path());
  }
  std::lock_guard lock(session->mutex);
  try {
    const TraceRecord& record = session->scenario.advance(action);
    append_line(session->file, trace_line(record));
    return json_response(200, to_json(record));
  } catch (const std::out_of_range&) {
    return error_response(422, "unknown intervention '" + *action + "'", "action");
  }
}

ApiResponse ScenarioService::whatif(const std::string& id, const std::string& body) {
  auto session = find(id);
  if (!session) return not_found(id);
  std::optional<std::string> action;
  try {
    action = action_field(parse_body(body));
  } catch (const ConfigError& e) {
    return error_response(400, e.message(), e.path());
  }
  if (!action) return error_response(400, "missing field", "action");
  std::lock_guard lock(session->mutex);
  try {
    Json out = Json::object();
    out["id"] = id;
    out["tick"] = session->scenario.last().tick;
    out["whatif"] = to_json(session->scenario.whatif(*action));
    out["state_hash"] = state_hash(session->scenario);
    return json_response(200, out);
  } catch (const std::out_of_range&) {
    return error_response(422, "unknown intervention '" + *action + "'", "action");
  }
}

ApiResponse ScenarioService::state(const std::string& id) {
  auto session = find(id);
  if (!session) return not_found(id);
  std::lock_guard lock(session->mutex);
  const Scenario& s = session->scenario;
  Json out = Json::object();
  out["id"] = id;
  out["tick"] = s.last().tick;
  out["state"] = to_json(s.state());
  out["lambda"] = s.config().agent.lambda;
  out["perturbation_weights"] = Json(s.config().kernel.perturbation_weights);
  out["state_hash"] = state_hash(s);
  return json_response(200, out);
}

ApiResponse ScenarioService::trace(const std::string& id) {
  auto session = find(id);
  if (!session) return not_found(id);
  std::lock_guard lock(session->mutex);
  std::ifstream in(session->file, std::ios::binary);
  return {200, std::string(std::istreambuf_iterator<char>(in), {}), "application/x-ndjson"};
}

ApiResponse ScenarioService::attribution(const std::string& id) {
  auto session = find(id);
  if (!session) return not_found(id);
  std::lock_guard lock(session->mutex);
  Json out = Json::object();
  out["id"] = id;
  out["tick"] = session->scenario.last().tick;
  out["output"] = to_json(session->scenario.current_output());
  return json_response(200, out);
}

ApiResponse ScenarioService::recommendation(const std::string& id) {
  auto session = find(id);
  if (!session) return not_found(id);
  std::lock_guard lock(session->mutex);
  Json out = Json::object();
  out["id"] = id;
  out["tick"] = session->scenario.last().tick;
  out["recommendation"] = to_json(session->scenario.recommendation());
  return json_response(200, out);
}

ApiResponse ScenarioService::norms(const std::string& id, const std::string& body) {
  auto session = find(id);
  if (!session) return not_found(id);
  Json j;
  try {
    j = parse_body(body);
  } catch (const ConfigError& e) {
    return error_response(400, e.message(), e.path());
  }
  std::lock_guard lock(session->mutex);
  Scenario& s = session->scenario;
  double lambda = s.config().agent.lambda;
  SourceWeights weights = s.config().kernel.perturbation_weights;
  try {
    lambda = json_io::number_or(j, "lambda", lambda, "");
    if (auto it = j.find("perturbation_weights"); it != j.end()) {
      weights = weights_from_json(*it, "perturbation_weights");
    }
    s.update_norms(lambda, weights);
  } catch (const ConfigError& e) {
    return error_response(422, e.message(), e.path());
  }
  append_line(session->file, norms_event_line(s.last().tick, lambda, weights));
  Json out = Json::object();
  out["id"] = id;
  out["tick"] = s.last().tick;
  out["lambda"] = s.config().agent.lambda;
  out["perturbation_weights"] = Json(s.config().kernel.perturbation_weights);
  return json_response(200, out);
}

}  // namespace ciim
