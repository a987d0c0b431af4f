#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmp/node.hpp"

namespace mmp {

struct Delivery {
  NodeId peer;
  bool ok = false;
  std::string error;
};
using DeliveryReport = std::vector<Delivery>;

nlohmann::json to_json(const DeliveryReport& report);

struct ObserveResult {
  StoredEntry entry;
  DeliveryReport delivery;
};

// The operations a node exposes to its operator: emit an observation
// (optionally to a single peer), query its own memory, and report status.
class MeshService {
 public:
  virtual ~MeshService() = default;

  virtual ObserveResult observe(const FieldTexts& texts, Mood mood, Body body,
                                const std::optional<NodeId>& to = std::nullopt) = 0;
  virtual std::vector<StoredEntry> recall(const FieldTexts& query, std::size_t limit) = 0;
  virtual StoredEntry fetch(const CmbKey& key) = 0;
  virtual std::vector<PeerStatus> peers() = 0;
  virtual nlohmann::json status() = 0;
};

nlohmann::json error_json(ErrorCode code, const std::string& message, const std::string& detail = {});

// Dispatches one control request:
//   {"cmd": "observe", "fields": {...}, "mood": {"valence": v, "arousal": a}, "body": {...}, "to": id}
//   {"cmd": "recall", "limit": n, "query": {...}}
//   {"cmd": "fetch", "key": k}
//   {"cmd": "peers"} | {"cmd": "status"}
// Never throws; failures come back as {"ok": false, "error": {...}}.
nlohmann::json handle_request(MeshService& service, const nlohmann::json& request);

}  // namespace mmp
