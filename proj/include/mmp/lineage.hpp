#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mmp/cat7.hpp"

namespace mmp {

inline constexpr std::size_t kUnboundedDepth = std::numeric_limits<std::size_t>::max();

// Parent/child graph over CMB keys seen by one node. Keys referenced as
// parents but never inserted are frontier keys: queryable, not expandable.
class LineageIndex {
 public:
  explicit LineageIndex(NodeId self) : self_(std::move(self)) {}

  struct InsertResult {
    // Carried ancestors disagree with what the local graph implies. The
    // carried list is kept as-is; echo checks union it with the local closure.
    bool ancestors_mismatch = false;
  };

  // `stored_at` is set for entries held in the owning store; only those can
  // be live for retention. Throws DuplicateKey, SelfParent, LineageCycle.
  InsertResult insert(const Cmb& cmb, std::optional<Timestamp> stored_at = std::nullopt);

  // Records a peer CMB seen by key and carried parents only. Never joins
  // K_self and never counts as live.
  void insert_foreign(const CmbKey& key, const std::vector<CmbKey>& parents);

  // Throws exactly what insert() would for these edges, without mutating.
  void check_insertable(const CmbKey& key, const std::vector<CmbKey>& parents) const;

  // Breadth-first closure over parent edges, nearest first, truncated after
  // `depth_bound` levels. Throws UnknownKey if `key` was never inserted.
  std::vector<CmbKey> ancestors(const CmbKey& key, std::size_t depth_bound = kMaxAncestors) const;

  // The first key of this node's own that the incoming CMB descends from.
  std::optional<CmbKey> echo_source(const Cmb& incoming) const;
  bool is_echo(const Cmb& incoming) const { return echo_source(incoming).has_value(); }

  // Mark live keys (stored_at + ttl > now) and all their ancestors, sweep the rest.
  std::set<CmbKey> prune(Timestamp now, Timestamp ttl);

  bool contains(const CmbKey& key) const { return nodes_.contains(key); }
  bool is_self(const CmbKey& key) const { return self_keys_.contains(key); }
  std::size_t size() const { return nodes_.size(); }
  const std::unordered_set<CmbKey>& self_keys() const { return self_keys_; }
  const std::set<CmbKey>& flagged() const { return flagged_; }
  std::vector<CmbKey> parents_of(const CmbKey& key) const;
  std::vector<CmbKey> children_of(const CmbKey& key) const;
  std::vector<CmbKey> keys() const;

  // Breadth-first closure from `start` (level 1) over known parent edges.
  std::vector<CmbKey> closure(const std::vector<CmbKey>& start, std::size_t depth_bound) const;

  // Adjacency and reverse maps agree and no node reaches itself.
  bool consistent() const;

  bool operator==(const LineageIndex& other) const;

 private:
  struct Node {
    std::vector<CmbKey> parents;
    std::optional<Timestamp> stored_at;
    bool operator==(const Node&) const = default;
  };

  void add_node(const CmbKey& key, const std::vector<CmbKey>& parents, std::optional<Timestamp> stored_at);
  bool reaches(const CmbKey& from, const CmbKey& target) const;

  NodeId self_;
  std::unordered_map<CmbKey, Node> nodes_;
  std::unordered_map<CmbKey, std::vector<CmbKey>> children_;
  std::unordered_set<CmbKey> self_keys_;
  std::set<CmbKey> flagged_;
};

}  // namespace mmp
