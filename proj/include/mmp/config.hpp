#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmp/store.hpp"

namespace mmp {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  // "host:port"; throws InvalidConfig naming `field`.
  static Endpoint parse(const std::string& text, const std::string& field);
  std::string to_string() const { return host + ":" + std::to_string(port); }
  bool operator==(const Endpoint&) const = default;
};

struct PeerRef {
  NodeId id;
  Endpoint address;
};

// Node configuration, read from a JSON file. Relative paths resolve against
// the directory holding the file.
struct PeerConfig {
  StoreConfig store;
  Endpoint listen;
  std::vector<PeerRef> peers;
  std::filesystem::path control_socket;
  // Reserved for mesh-group isolation; parsed and ignored.
  std::optional<std::string> group_token;
  // Re-broadcast stored remixes to every peer.
  bool relay_remixes = false;
  std::int64_t reconnect_initial_ms = 100;
  std::int64_t reconnect_max_ms = 30'000;

  const NodeId& node_id() const { return store.node_id; }

  // Throws InvalidConfig whose detail() is the offending field path.
  static PeerConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PeerConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

RoleProfile profile_from_json(const nlohmann::json& j);
nlohmann::json profile_to_json(const RoleProfile& p);

}  // namespace mmp
