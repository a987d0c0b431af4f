#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mmp/error.hpp"
#include "mmp/store.hpp"
#include "mmp/wire.hpp"

namespace mmp {

struct DropCounts {
  std::uint64_t echo = 0;
  std::uint64_t redundant = 0;
  std::uint64_t rejected = 0;
  std::uint64_t malformed = 0;

  DropCounts& operator+=(const DropCounts& o);
  bool operator==(const DropCounts&) const = default;
};

struct PeerStatus {
  NodeId id;
  std::string address;
  bool connected = false;
  Timestamp last_seen = 0;
  std::uint64_t frames_in = 0;
  std::uint64_t frames_out = 0;
  std::uint64_t send_failures = 0;
  DropCounts drops;
};

nlohmann::json to_json(const DropCounts& d);
nlohmann::json to_json(const PeerStatus& s);

struct FrameResult {
  std::optional<ReceiveOutcome> outcome;
  std::optional<ErrorCode> error;  // set when the frame was dropped as malformed
  std::string error_message;
};

// The receive pipeline shared by the daemon and the simulator: decode, run the
// store's admission path, and account the outcome against the sending peer.
class Node {
 public:
  explicit Node(MeshMem mem) : mem_(std::move(mem)) {}

  FrameResult on_frame(std::string_view line, const NodeId& from, Timestamp now);

  MeshMem& store() { return mem_; }
  const MeshMem& store() const { return mem_; }

  PeerStatus& peer(const NodeId& id);
  const std::map<NodeId, PeerStatus>& peers() const { return peers_; }
  DropCounts total_drops() const;

 private:
  MeshMem mem_;
  std::map<NodeId, PeerStatus> peers_;
};

}  // namespace mmp
