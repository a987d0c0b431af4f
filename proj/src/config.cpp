#include "mmp/config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "mmp/error.hpp"

namespace mmp {
namespace {

using json = nlohmann::json;

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::InvalidConfig, field + ": " + why, field);
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.contains(it.key())) invalid(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
  }
}

std::string get_string(const json& obj, const char* key, const std::string& where, bool required = true,
                       std::string fallback = {}) {
  const auto field = where.empty() ? std::string(key) : where + "." + key;
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (required) invalid(field, "missing");
    return fallback;
  }
  if (!it->is_string()) invalid(field, "expected string");
  return it->get<std::string>();
}

double get_number(const json& obj, const char* key, const std::string& where, double fallback) {
  const auto field = where.empty() ? std::string(key) : where + "." + key;
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number()) invalid(field, "expected number");
  return it->get<double>();
}

std::int64_t get_int(const json& obj, const char* key, const std::string& where, std::int64_t fallback) {
  const auto field = where.empty() ? std::string(key) : where + "." + key;
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_integer()) invalid(field, "expected integer");
  return it->get<std::int64_t>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text, const std::string& field) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) invalid(field, "expected host:port");
  Endpoint e;
  e.host = text.substr(0, colon);
  unsigned port = 0;
  const auto* first = text.data() + colon + 1;
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, port);
  if (ec != std::errc{} || ptr != last || port > 65535) invalid(field, "invalid port");
  e.port = static_cast<std::uint16_t>(port);
  return e;
}

RoleProfile profile_from_json(const json& j) {
  if (!j.is_object()) invalid("profile", "expected object");
  reject_unknown(j, {"preset", "role", "alpha", "lambdaPerMs"}, "profile");
  RoleProfile p;
  if (j.contains("preset")) {
    try {
      p = RoleProfile::preset(get_string(j, "preset", "profile"));
    } catch (const Error& e) {
      invalid("profile.preset", e.what());
    }
  }
  p.node_role = get_string(j, "role", "profile", false, p.node_role);
  if (auto it = j.find("alpha"); it != j.end()) {
    if (!it->is_object()) invalid("profile.alpha", "expected object");
    for (auto a = it->begin(); a != it->end(); ++a) {
      auto f = parse_field_name(a.key());
      if (!f) invalid("profile.alpha." + a.key(), "not a CAT7 field");
      if (!a->is_number()) invalid("profile.alpha." + a.key(), "expected number");
      p.alpha[index_of(*f)] = a->get<double>();
    }
  }
  p.lambda_per_ms = get_number(j, "lambdaPerMs", "profile", p.lambda_per_ms);
  try {
    p.validate();
  } catch (const Error& e) {
    invalid("profile." + e.detail(), e.what());
  }
  return p;
}

json profile_to_json(const RoleProfile& p) {
  json alpha = json::object();
  for (auto f : kFields) alpha[std::string(field_name(f))] = p.alpha[index_of(f)];
  return json{{"role", p.node_role}, {"alpha", alpha}, {"lambdaPerMs", p.lambda_per_ms}};
}

PeerConfig PeerConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) invalid("config", "expected object");
  reject_unknown(j,
                 {"nodeId", "roleName", "listen", "peers", "profile", "thresholds", "persistencePath",
                  "controlSocket", "dim", "ttlMs", "tierAges", "beta", "groupToken", "relayRemixes",
                  "reconnect"},
                 "");
  PeerConfig c;
  auto& s = c.store;
  s.node_id = get_string(j, "nodeId", "");
  if (s.node_id.empty()) invalid("nodeId", "empty");
  if (s.node_id.find('+') != std::string::npos) invalid("nodeId", "must not contain '+'");
  s.role_name = get_string(j, "roleName", "", false);
  c.listen = Endpoint::parse(get_string(j, "listen", ""), "listen");

  if (auto it = j.find("peers"); it != j.end()) {
    if (!it->is_array()) invalid("peers", "expected array");
    std::set<std::string> ids{s.node_id};
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto where = "peers[" + std::to_string(i) + "]";
      const auto& pj = (*it)[i];
      if (!pj.is_object()) invalid(where, "expected object");
      reject_unknown(pj, {"id", "address"}, where);
      PeerRef ref{get_string(pj, "id", where), Endpoint::parse(get_string(pj, "address", where), where + ".address")};
      if (ref.id.empty()) invalid(where + ".id", "empty");
      if (!ids.insert(ref.id).second) invalid(where + ".id", "duplicate node id");
      c.peers.push_back(std::move(ref));
    }
  }

  if (auto it = j.find("profile"); it != j.end()) s.profile = profile_from_json(*it);
  if (auto it = j.find("thresholds"); it != j.end()) {
    if (!it->is_object()) invalid("thresholds", "expected object");
    reject_unknown(*it, {"redundant", "aligned", "guarded"}, "thresholds");
    s.thresholds.redundant = get_number(*it, "redundant", "thresholds", s.thresholds.redundant);
    s.thresholds.aligned = get_number(*it, "aligned", "thresholds", s.thresholds.aligned);
    s.thresholds.guarded = get_number(*it, "guarded", "thresholds", s.thresholds.guarded);
  }
  s.persistence_path = resolve(base_dir, get_string(j, "persistencePath", ""));
  const auto sock = get_string(j, "controlSocket", "", false);
  if (sock.empty()) {
    c.control_socket = s.persistence_path;
    c.control_socket += ".sock";
  } else {
    c.control_socket = resolve(base_dir, sock);
  }
  const auto dim = get_int(j, "dim", "", static_cast<std::int64_t>(kDefaultDim));
  if (dim < 2) invalid("dim", "must be at least 2");
  s.dim = static_cast<std::size_t>(dim);
  s.ttl_ms = get_int(j, "ttlMs", "", s.ttl_ms);
  if (auto it = j.find("tierAges"); it != j.end()) {
    if (!it->is_object()) invalid("tierAges", "expected object");
    reject_unknown(*it, {"warmMs", "coldMs"}, "tierAges");
    s.warm_after_ms = get_int(*it, "warmMs", "tierAges", s.warm_after_ms);
    s.cold_after_ms = get_int(*it, "coldMs", "tierAges", s.cold_after_ms);
  }
  s.beta = get_number(j, "beta", "", s.beta);
  if (j.contains("groupToken")) c.group_token = get_string(j, "groupToken", "");
  if (auto it = j.find("relayRemixes"); it != j.end()) {
    if (!it->is_boolean()) invalid("relayRemixes", "expected boolean");
    c.relay_remixes = it->get<bool>();
  }
  if (auto it = j.find("reconnect"); it != j.end()) {
    if (!it->is_object()) invalid("reconnect", "expected object");
    reject_unknown(*it, {"initialMs", "maxMs"}, "reconnect");
    c.reconnect_initial_ms = get_int(*it, "initialMs", "reconnect", c.reconnect_initial_ms);
    c.reconnect_max_ms = get_int(*it, "maxMs", "reconnect", c.reconnect_max_ms);
    if (c.reconnect_initial_ms <= 0 || c.reconnect_max_ms < c.reconnect_initial_ms) {
      invalid("reconnect", "require 0 < initialMs <= maxMs");
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    invalid(e.detail().empty() ? "config" : e.detail(), e.what());
  }
  return c;
}

PeerConfig PeerConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    invalid("config", std::string("not valid JSON: ") + e.what());
  }
  return from_json(j, path.parent_path());
}

json PeerConfig::to_json() const {
  json peers_j = json::array();
  for (const auto& p : peers) peers_j.push_back({{"id", p.id}, {"address", p.address.to_string()}});
  json j{{"nodeId", store.node_id},
         {"roleName", store.role_name},
         {"listen", listen.to_string()},
         {"peers", peers_j},
         {"profile", profile_to_json(store.profile)},
         {"thresholds",
          {{"redundant", store.thresholds.redundant},
           {"aligned", store.thresholds.aligned},
           {"guarded", store.thresholds.guarded}}},
         {"persistencePath", store.persistence_path.string()},
         {"controlSocket", control_socket.string()},
         {"dim", store.dim},
         {"ttlMs", store.ttl_ms},
         {"tierAges", {{"warmMs", store.warm_after_ms}, {"coldMs", store.cold_after_ms}}},
         {"beta", store.beta},
         {"relayRemixes", relay_remixes},
         {"reconnect", {{"initialMs", reconnect_initial_ms}, {"maxMs", reconnect_max_ms}}}};
  if (group_token) j["groupToken"] = *group_token;
  return j;
}

}  // namespace mmp
