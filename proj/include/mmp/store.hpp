#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmp/cat7.hpp"
#include "mmp/entry.hpp"
#include "mmp/lineage.hpp"
#include "mmp/svaf.hpp"

namespace mmp {

inline constexpr Timestamp kHourMs = 3'600'000;
inline constexpr Timestamp kDayMs = 24 * kHourMs;

struct StoreConfig {
  NodeId node_id;
  // Written into the perspective text of every remix. Falls back to profile.node_role.
  std::string role_name;
  RoleProfile profile;
  Thresholds thresholds;
  // Empty keeps the store in memory only.
  std::filesystem::path persistence_path;
  std::size_t dim = kDefaultDim;
  // Remix blend: beta * anchor + (1 - beta) * incoming.
  double beta = 0.5;
  Timestamp ttl_ms = 7 * kDayMs;
  Timestamp warm_after_ms = kHourMs;
  Timestamp cold_after_ms = kDayMs;
  // Per-entry fusion confidence; 1.0 for every entry when unset.
  std::function<double(const StoredEntry&)> confidence;

  const std::string& role() const { return role_name.empty() ? profile.node_role : role_name; }
  void validate() const;
};

enum class ReceiveKind { stored, duplicate, echo_dropped, redundant_dropped, rejected_dropped };
std::string_view to_string(ReceiveKind k);

struct ReceiveOutcome {
  ReceiveKind kind = ReceiveKind::duplicate;
  std::optional<StoredEntry> entry;  // stored only
  std::optional<SvafResult> svaf;    // set whenever the gate ran
  std::optional<CmbKey> echo_of;     // own key the incoming descends from
};

// One node's memory. Holds only this node's own observations and the remixes
// it minted from admitted peer CMBs; raw peer CMBs are never stored.
class MeshMem {
 public:
  // Reads the persistence log if it exists; a missing file is a fresh node.
  // Throws CorruptStore with the offending record index in detail().
  static MeshMem load(StoreConfig config);

  const StoredEntry& observe(const FieldTexts& texts, Mood mood, Body body, Timestamp now);
  ReceiveOutcome receive(const Cmb& incoming, Timestamp now);

  // Mints the receiver's remix of an admitted CMB. Does not store it.
  Cmb remix(const Cmb& incoming, const Evaluation& evaluation, Timestamp now) const;

  std::vector<StoredEntry> recall(const FieldTexts& query, std::size_t limit) const;
  std::vector<StoredEntry> recall(std::size_t limit) const { return recall({}, limit); }
  const StoredEntry& fetch(const CmbKey& key) const;
  bool contains(const CmbKey& key) const { return by_key_.contains(key); }

  // Expires entries with no live descendants and compacts the log.
  std::set<CmbKey> prune(Timestamp now);
  // hot -> warm -> cold by age; returns the number of entries demoted.
  std::size_t demote_tiers(Timestamp now);
  // Rewrites the log from the in-memory entries.
  void save() const;

  StoreView view() const;
  Evaluation evaluate(const Cmb& incoming, Timestamp now) const;

  const NodeId& node_id() const { return config_.node_id; }
  const StoreConfig& config() const { return config_; }
  const std::vector<StoredEntry>& entries() const { return entries_; }
  const LineageIndex& lineage() const { return lineage_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Exact bytes of the persistence log for the current entries.
  std::string serialized() const;
  std::string digest() const;
  // Empty when every store invariant holds, otherwise a description.
  std::string invariant_violation() const;

 private:
  explicit MeshMem(StoreConfig config);

  void append_record(const std::string& line) const;
  void add_entry(StoredEntry entry);
  void rebuild_key_index();

  StoreConfig config_;
  std::vector<StoredEntry> entries_;
  std::unordered_map<CmbKey, std::size_t> by_key_;
  LineageIndex lineage_;
};

}  // namespace mmp
