#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmp/cat7.hpp"
#include "mmp/svaf.hpp"

namespace mmp {

enum class Lifecycle { observed, remixed };
enum class Tier { hot, warm, cold };

std::string_view to_string(Lifecycle l);
std::string_view to_string(Tier t);
std::optional<Lifecycle> parse_lifecycle(std::string_view s);
std::optional<Tier> parse_tier(std::string_view s);

// A CMB as held in a node's store, plus the metadata the store keeps about it.
struct StoredEntry {
  Cmb cmb;
  std::string source;
  Timestamp stored_at = 0;
  Lifecycle lifecycle = Lifecycle::observed;
  Tier tier = Tier::hot;
  double anchor_weight = 1.0;
  std::optional<SvafResult> svaf;
  // Unrecognised keys of the svaf block (e.g. neural gate values), kept verbatim.
  nlohmann::ordered_json svaf_extras = nlohmann::ordered_json::object();
  // Remixes only: the parents the admitted incoming CMB carried, so the
  // lineage index can be rebuilt from the store alone.
  std::vector<CmbKey> origin_parents;
  // Unrecognised top-level keys, re-emitted after the canonical ones.
  nlohmann::ordered_json extensions = nlohmann::ordered_json::object();

  const CmbKey& key() const { return cmb.key(); }
  bool operator==(const StoredEntry&) const = default;
};

}  // namespace mmp
