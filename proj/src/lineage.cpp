#include "mmp/lineage.hpp"

#include <algorithm>
#include <deque>

#include "mmp/error.hpp"

namespace mmp {

std::vector<CmbKey> LineageIndex::closure(const std::vector<CmbKey>& start, std::size_t depth_bound) const {
  std::vector<CmbKey> out;
  if (depth_bound == 0) return out;
  std::unordered_set<CmbKey> seen;
  std::vector<CmbKey> level;
  for (const auto& k : start) {
    if (seen.insert(k).second) {
      out.push_back(k);
      level.push_back(k);
    }
  }
  for (std::size_t depth = 1; depth < depth_bound && !level.empty(); ++depth) {
    std::vector<CmbKey> next;
    for (const auto& k : level) {
      auto it = nodes_.find(k);
      if (it == nodes_.end()) continue;  // frontier key
      for (const auto& p : it->second.parents) {
        if (seen.insert(p).second) {
          out.push_back(p);
          next.push_back(p);
        }
      }
    }
    level = std::move(next);
  }
  return out;
}

bool LineageIndex::reaches(const CmbKey& from, const CmbKey& target) const {
  // Walks child edges from `from`; true if `target` is a descendant.
  std::deque<CmbKey> queue{from};
  std::unordered_set<CmbKey> seen{from};
  while (!queue.empty()) {
    auto k = std::move(queue.front());
    queue.pop_front();
    auto it = children_.find(k);
    if (it == children_.end()) continue;
    for (const auto& c : it->second) {
      if (c == target) return true;
      if (seen.insert(c).second) queue.push_back(c);
    }
  }
  return false;
}

void LineageIndex::check_insertable(const CmbKey& key, const std::vector<CmbKey>& parents) const {
  if (nodes_.contains(key)) throw Error(ErrorCode::DuplicateKey, "key already indexed", key);
  if (std::find(parents.begin(), parents.end(), key) != parents.end()) {
    throw Error(ErrorCode::SelfParent, "CMB lists itself as a parent", key);
  }
  // The new key may already be a frontier parent of indexed nodes; none of
  // its own parents may be among those descendants.
  for (const auto& p : parents) {
    if (reaches(key, p)) throw Error(ErrorCode::LineageCycle, "insert would create a cycle", key);
  }
}

void LineageIndex::add_node(const CmbKey& key, const std::vector<CmbKey>& parents,
                            std::optional<Timestamp> stored_at) {
  std::vector<CmbKey> unique_parents;
  for (const auto& p : parents) {
    if (std::find(unique_parents.begin(), unique_parents.end(), p) == unique_parents.end()) {
      unique_parents.push_back(p);
    }
  }
  for (const auto& p : unique_parents) children_[p].push_back(key);
  nodes_.emplace(key, Node{std::move(unique_parents), stored_at});
}

LineageIndex::InsertResult LineageIndex::insert(const Cmb& cmb, std::optional<Timestamp> stored_at) {
  const auto& key = cmb.key();
  const auto& parents = cmb.lineage().parents;
  check_insertable(key, parents);

  InsertResult result;
  const auto& carried = cmb.lineage().ancestors;
  if (carried.size() < kMaxAncestors) {
    const std::unordered_set<CmbKey> carried_set(carried.begin(), carried.end());
    const auto local = closure(parents, kMaxAncestors);
    result.ancestors_mismatch =
        std::any_of(local.begin(), local.end(), [&](const CmbKey& k) { return !carried_set.contains(k); });
  }
  if (result.ancestors_mismatch) flagged_.insert(key);

  add_node(key, parents, stored_at);
  if (cmb.created_by() == self_) self_keys_.insert(key);
  return result;
}

void LineageIndex::insert_foreign(const CmbKey& key, const std::vector<CmbKey>& parents) {
  check_insertable(key, parents);
  add_node(key, parents, std::nullopt);
}

std::vector<CmbKey> LineageIndex::ancestors(const CmbKey& key, std::size_t depth_bound) const {
  auto it = nodes_.find(key);
  if (it == nodes_.end()) throw Error(ErrorCode::UnknownKey, "key not in lineage index", key);
  return closure(it->second.parents, depth_bound);
}

std::optional<CmbKey> LineageIndex::echo_source(const Cmb& incoming) const {
  for (const auto& k : incoming.lineage().ancestors) {
    if (self_keys_.contains(k)) return k;
  }
  for (const auto& k : closure(incoming.lineage().parents, kMaxAncestors)) {
    if (self_keys_.contains(k)) return k;
  }
  return std::nullopt;
}

std::set<CmbKey> LineageIndex::prune(Timestamp now, Timestamp ttl) {
  if (ttl <= 0) throw Error(ErrorCode::InvalidArgument, "ttl must be positive");
  std::vector<CmbKey> live;
  for (const auto& [k, n] : nodes_) {
    if (n.stored_at && *n.stored_at + ttl > now) live.push_back(k);
  }
  std::unordered_set<CmbKey> protect(live.begin(), live.end());
  for (const auto& k : closure(live, kUnboundedDepth)) protect.insert(k);

  std::set<CmbKey> removed;
  for (const auto& [k, n] : nodes_) {
    if (!protect.contains(k)) removed.insert(k);
  }
  for (const auto& k : removed) {
    auto it = nodes_.find(k);
    for (const auto& p : it->second.parents) {
      auto c = children_.find(p);
      if (c == children_.end()) continue;
      std::erase(c->second, k);
      if (c->second.empty()) children_.erase(c);
    }
    nodes_.erase(it);
    self_keys_.erase(k);
    flagged_.erase(k);
  }
  // Any child of a removed key was itself unprotected and is gone.
  for (const auto& k : removed) children_.erase(k);
  return removed;
}

std::vector<CmbKey> LineageIndex::parents_of(const CmbKey& key) const {
  auto it = nodes_.find(key);
  if (it == nodes_.end()) throw Error(ErrorCode::UnknownKey, "key not in lineage index", key);
  return it->second.parents;
}

std::vector<CmbKey> LineageIndex::children_of(const CmbKey& key) const {
  auto it = children_.find(key);
  return it == children_.end() ? std::vector<CmbKey>{} : it->second;
}

std::vector<CmbKey> LineageIndex::keys() const {
  std::vector<CmbKey> out;
  out.reserve(nodes_.size());
  for (const auto& [k, _] : nodes_) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

bool LineageIndex::consistent() const {
  std::size_t edges = 0;
  for (const auto& [k, n] : nodes_) {
    for (const auto& p : n.parents) {
      auto c = children_.find(p);
      if (c == children_.end() || std::count(c->second.begin(), c->second.end(), k) != 1) return false;
      ++edges;
    }
    if (reaches(k, k)) return false;
  }
  std::size_t reverse_edges = 0;
  for (const auto& [p, cs] : children_) {
    for (const auto& c : cs) {
      auto it = nodes_.find(c);
      if (it == nodes_.end()) return false;
      if (std::find(it->second.parents.begin(), it->second.parents.end(), p) == it->second.parents.end()) {
        return false;
      }
      ++reverse_edges;
    }
  }
  return edges == reverse_edges;
}

bool LineageIndex::operator==(const LineageIndex& other) const {
  if (self_ != other.self_ || nodes_ != other.nodes_ || self_keys_ != other.self_keys_) return false;
  if (children_.size() != other.children_.size()) return false;
  for (const auto& [k, cs] : children_) {
    auto it = other.children_.find(k);
    if (it == other.children_.end()) return false;
    auto a = cs;
    auto b = it->second;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) return false;
  }
  return true;
}

}  // namespace mmp
