// Eigen must come first: httplib pulls in <resolv.h>, whose _res macro
// clashes with Eigen parameter names.
#include "ciim/service.hpp"

#include <httplib.h>

namespace ciim {

namespace {

using Handler = ApiResponse (ScenarioService::*)(const std::string&);
using BodyHandler = ApiResponse (ScenarioService::*)(const std::string&, const std::string&);

void send(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body, api.content_type);
}

}  // namespace

void mount(httplib::Server& server, ScenarioService& service) {
  // The console runs on its own origin.
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/scenarios.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/scenarios", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.create(req.body));
  });

  const std::string id = R"(/scenarios/([^/]+))";
  auto get = [&](const std::string& suffix, Handler h) {
    server.Get(id + suffix, [&service, h](const httplib::Request& req, httplib::Response& res) {
      send(res, (service.*h)(req.matches[1]));
    });
  };
  auto with_body = [&](const std::string& suffix, BodyHandler h, bool put) {
    auto handler = [&service, h](const httplib::Request& req, httplib::Response& res) {
      send(res, (service.*h)(req.matches[1], req.body));
    };
    if (put) {
      server.Put(id + suffix, handler);
    } else {
      server.Post(id + suffix, handler);
    }
  };

  with_body("/step", &ScenarioService::step, false);
  with_body("/whatif", &ScenarioService::whatif, false);
  with_body("/norms", &ScenarioService::norms, true);
  get("/state", &ScenarioService::state);
  get("/trace", &ScenarioService::trace);
  get("/attribution", &ScenarioService::attribution);
  get("/recommendation", &ScenarioService::recommendation);
}

bool serve(ScenarioService& service, int port) {
  httplib::Server server;
  mount(server, service);
  return server.listen("127.0.0.1", port);
}

}  // namespace ciim
