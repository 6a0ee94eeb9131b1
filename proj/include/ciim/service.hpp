#pragma once

// Scenario sessions behind a transport-neutral request API. Every handler
// returns a status and a body; the HTTP layer only routes.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ciim/scenario_sim.hpp"

namespace httplib {
class Server;
}

namespace ciim {

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// FNV-1a over the state, generator position and norms, as 16 hex digits.
std::string state_hash(const Scenario& scenario);

class ScenarioService {
 public:
  // Creates the directory if needed and rebuilds every session found in it by
  // replaying its trace file.
  explicit ScenarioService(std::filesystem::path data_dir);

  ApiResponse create(const std::string& body);
  ApiResponse step(const std::string& id, const std::string& body);
  ApiResponse whatif(const std::string& id, const std::string& body);
  ApiResponse state(const std::string& id);
  ApiResponse trace(const std::string& id);
  ApiResponse attribution(const std::string& id);
  ApiResponse recommendation(const std::string& id);
  ApiResponse norms(const std::string& id, const std::string& body);

  std::vector<std::string> ids() const;
  // Trace files that could not be replayed at startup, with the reason.
  const std::vector<std::string>& recovery_errors() const { return recovery_errors_; }
  const std::filesystem::path& data_dir() const { return data_dir_; }

 private:
  struct Session {
    std::mutex mutex;
    Scenario scenario;
    std::filesystem::path file;

    Session(Scenario s, std::filesystem::path f) : scenario(std::move(s)), file(std::move(f)) {}
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  std::string next_id();

  std::filesystem::path data_dir_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::vector<std::string> recovery_errors_;
};

// Registers the HTTP routes on `server`.
void mount(httplib::Server& server, ScenarioService& service);

// Blocks serving on 127.0.0.1:port. Returns false when the port cannot be bound.
bool serve(ScenarioService& service, int port);

}  // namespace ciim
