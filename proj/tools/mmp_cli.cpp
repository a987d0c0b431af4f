// mmp: command-line front end for a mesh node.
//
//   mmp --config node.json daemon
//   mmp --config node.json observe --focus ... --mood TEXT [--valence F --arousal F] [--body FILE]
//   mmp --config node.json send --to PEER <observe flags>
//   mmp --config node.json recall [--limit N] [--focus TEXT ...]
//   mmp --config node.json fetch --key KEY
//   mmp --config node.json peers | status
//   mmp sim SCENARIO           run a scenario file or built-in name, print the trace
//
// Commands talk to a running daemon over its control socket, or open the
// store directly when no daemon answers. Results go to stdout as JSON (one
// wire-entry record per line for recall/fetch); diagnostics go to stderr.
// Exit codes: 0 ok, 1 domain error, 2 usage.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmp/config.hpp"
#include "mmp/error.hpp"
#include "mmp/peer.hpp"
#include "mmp/service.hpp"
#include "mmp/sim.hpp"

namespace {

using json = nlohmann::json;
using mmp::ErrorCode;

struct FieldFlags {
  std::map<mmp::FieldName, std::string> texts;

  void add(CLI::App* cmd, bool required) {
    for (auto f : mmp::kFields) {
      auto* opt = cmd->add_option("--" + std::string(mmp::field_name(f)), texts[f], std::string(mmp::field_name(f)) + " text");
      if (required) opt->required();
    }
  }
  json to_json() const {
    json j = json::object();
    for (const auto& [f, t] : texts) {
      if (!t.empty()) j[std::string(mmp::field_name(f))] = t;
    }
    return j;
  }
};

int fail(const json& response) {
  const auto& err = response.at("error");
  std::cout << json{{"error", err}}.dump() << "\n";
  std::cerr << "mmp: " << err.value("code", "") << ": " << err.value("message", "");
  if (err.contains("detail")) std::cerr << " (" << err["detail"].get<std::string>() << ")";
  std::cerr << "\n";
  return 1;
}

int fail(const mmp::Error& e) { return fail(mmp::error_json(e.code(), e.what(), e.detail())); }

json dispatch(const mmp::PeerConfig& config, const json& request) {
  if (mmp::control_socket_live(config.control_socket)) return mmp::control_request(config.control_socket, request);
  mmp::OfflineService offline(config);
  return mmp::handle_request(offline, request);
}

int print(const json& response, const std::string& cmd) {
  if (!response.value("ok", false)) return fail(response);
  if (cmd == "recall") {
    for (const auto& r : response.at("records")) std::cout << r.get<std::string>() << "\n";
  } else if (cmd == "fetch") {
    std::cout << response.at("record").get<std::string>() << "\n";
  } else if (cmd == "peers") {
    std::cout << response.at("peers").dump() << "\n";
  } else {
    json out = response;
    out.erase("ok");
    std::cout << out.dump() << "\n";
  }
  return 0;
}

int run_daemon(const mmp::PeerConfig& config) {
  // Block the stop signals before any thread starts so only sigtimedwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);

  if (mmp::control_socket_live(config.control_socket)) {
    throw mmp::Error(ErrorCode::BindFailure, "another daemon answers on the control socket",
                     config.control_socket.string());
  }
  auto peer = mmp::Peer::start(config);
  mmp::ControlServer control(*peer, config.control_socket);
  std::cout << json{{"node", config.node_id()},
                    {"listen", config.listen.host + ":" + std::to_string(peer->bound_port())},
                    {"control", config.control_socket.string()},
                    {"entries", peer->store_size()}}
                   .dump()
            << std::endl;
  std::cerr << "mmp: daemon " << config.node_id() << " running\n";

  timespec tick{0, 200'000'000};
  while (!control.shutdown_requested()) {
    if (sigtimedwait(&stop, nullptr, &tick) > 0) break;
  }
  std::cerr << "mmp: daemon " << config.node_id() << " stopping\n";
  control.stop();
  peer->shutdown();
  return 0;
}

int run_sim(const std::string& name) {
  mmp::sim::Scenario s;
  if (name == "echo_loop") {
    s = mmp::sim::scenario_echo_loop();
  } else if (name == "restart_recall") {
    s = mmp::sim::scenario_restart_recall();
  } else if (name == "role_divergence") {
    s = mmp::sim::scenario_role_divergence();
  } else if (name == "write_filter") {
    s = mmp::sim::scenario_write_filter();
  } else {
    s = mmp::sim::Scenario::load(name);
  }
  for (const auto& step : mmp::sim::run(s).to_json()) std::cout << step.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh memory node"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "node configuration file (all commands but sim)")->envname("MMP_CONFIG");

  auto* daemon = app.add_subcommand("daemon", "run the node until SIGINT/SIGTERM");

  FieldFlags observe_fields;
  double valence = 0.0;
  double arousal = 0.0;
  std::string body_path;
  std::string to;
  auto* observe = app.add_subcommand("observe", "emit an observation to every peer");
  auto* send = app.add_subcommand("send", "emit an observation to one peer");
  for (auto* cmd : {observe, send}) {
    observe_fields.add(cmd, true);
    cmd->add_option("--valence", valence, "mood valence in [-1, 1]");
    cmd->add_option("--arousal", arousal, "mood arousal in [-1, 1]");
    cmd->add_option("--body", body_path, "JSON object file carried as the body")->check(CLI::ExistingFile);
  }
  send->add_option("--to", to, "receiving peer id")->required();

  FieldFlags query_fields;
  int limit = 10;
  auto* recall = app.add_subcommand("recall", "list stored entries, best match first");
  recall->add_option("--limit", limit, "maximum entries")->check(CLI::PositiveNumber);
  query_fields.add(recall, false);

  std::string key;
  auto* fetch = app.add_subcommand("fetch", "print one stored entry");
  fetch->add_option("--key", key, "CMB key")->required();

  auto* peers = app.add_subcommand("peers", "peer connection table");
  auto* status = app.add_subcommand("status", "node summary");

  std::string scenario;
  auto* sim = app.add_subcommand("sim", "run a scenario, one trace step per line");
  sim->add_option("scenario", scenario, "scenario JSON file, or echo_loop | restart_recall | role_divergence | write_filter")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!sim->parsed() && config_path.empty()) {
    std::cerr << "--config is required\n";
    return 2;
  }

  try {
    if (sim->parsed()) return run_sim(scenario);
    const auto config = mmp::PeerConfig::load(config_path);
    if (daemon->parsed()) return run_daemon(config);

    json request;
    std::string cmd;
    if (observe->parsed() || send->parsed()) {
      cmd = "observe";
      request = {{"cmd", cmd}, {"fields", observe_fields.to_json()}, {"mood", {{"valence", valence}, {"arousal", arousal}}}};
      if (!body_path.empty()) {
        std::ifstream in(body_path);
        try {
          request["body"] = json::parse(in);
        } catch (const json::parse_error& e) {
          throw mmp::Error(ErrorCode::InvalidArgument, "body file is not valid JSON", body_path);
        }
      }
      if (send->parsed()) request["to"] = to;
    } else if (recall->parsed()) {
      cmd = "recall";
      request = {{"cmd", cmd}, {"limit", limit}};
      if (auto q = query_fields.to_json(); !q.empty()) request["query"] = q;
    } else if (fetch->parsed()) {
      cmd = "fetch";
      request = {{"cmd", cmd}, {"key", key}};
    } else if (peers->parsed()) {
      cmd = "peers";
      request = {{"cmd", cmd}};
    } else if (status->parsed()) {
      cmd = "status";
      request = {{"cmd", cmd}};
    }
    return print(dispatch(config, request), cmd);
  } catch (const mmp::Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    return fail(mmp::error_json(ErrorCode::InvalidArgument, e.what()));
  }
}
