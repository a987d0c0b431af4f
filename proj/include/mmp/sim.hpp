#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmp/node.hpp"

namespace mmp::sim {

struct NodeSpec {
  NodeId id;
  std::string role;
  RoleProfile profile;
  Thresholds thresholds;
  double beta = 0.5;
};

// A scripted coordination case. Steps stay as JSON objects keyed by "op":
//   observe    {node, as, fields, mood?, body?}
//   deliver    {cmb, to, as?, id?, stripLineage?, expect?, expectDecision?}
//   broadcast  {cmb, as?, id?}          to every node except the creator
//   restart    {node}                   drop in-memory state, reload the log
//   advance    {ms}
//   checkpoint {name}
//   random     {count, observeRatio?}   seeded random observe/deliver traffic
//   assert     {check, ...}
struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  Timestamp start_ms = 1'776'673'315'712;
  std::vector<NodeSpec> nodes;
  std::vector<nlohmann::json> steps;

  static Scenario from_json(const nlohmann::json& j);
  static Scenario load(const std::filesystem::path& path);
};

struct TraceStep {
  std::size_t index = 0;
  std::string op;
  nlohmann::json detail;
  std::map<NodeId, std::string> digests;
};

struct Trace {
  std::vector<TraceStep> steps;
  nlohmann::json to_json() const;
  std::string serialize() const { return to_json().dump(); }
};

struct DeliveryRecord {
  std::size_t step = 0;
  NodeId to;
  CmbKey key;
  FrameResult result;
};

// Runs a scenario against real stores on a virtual clock. Each node persists
// to its own log under the work directory so restarts reload from disk.
class Simulator {
 public:
  // An empty work_dir uses a fresh temporary directory, removed on destruction.
  explicit Simulator(Scenario scenario, std::filesystem::path work_dir = {});
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  // Throws ScriptError (detail "step N") when a step or assertion fails.
  Trace run();

  Node& node(const NodeId& id);
  const Cmb& labeled(const std::string& label) const;
  bool has_label(const std::string& label) const { return labels_.contains(label); }
  const std::vector<DeliveryRecord>& deliveries() const { return deliveries_; }
  const DeliveryRecord& delivery(const std::string& id) const;
  Timestamp now() const { return now_; }

 private:
  struct Checkpoint {
    std::size_t delivery_count = 0;
    std::map<NodeId, std::string> digests;
    std::map<NodeId, std::vector<StoredEntry>> recall;
    std::map<NodeId, std::set<CmbKey>> keys;
  };

  StoreConfig store_config(const NodeSpec& spec) const;
  void exec(std::size_t index, const nlohmann::json& step, TraceStep& out);
  nlohmann::json deliver(std::size_t index, const Cmb& cmb, const NodeId& to, bool strip_lineage,
                         const std::optional<std::string>& as, const std::optional<std::string>& id);
  void check(std::size_t index, const nlohmann::json& step, TraceStep& out);
  void random_traffic(std::size_t index, const nlohmann::json& step, TraceStep& out);

  Scenario scenario_;
  std::filesystem::path work_dir_;
  bool owns_work_dir_ = false;
  Timestamp now_ = 0;
  std::mt19937_64 rng_;
  std::vector<NodeId> order_;
  std::map<NodeId, NodeSpec> specs_;
  std::map<NodeId, std::unique_ptr<Node>> nodes_;
  std::map<std::string, Cmb> labels_;
  std::vector<std::string> label_order_;
  std::vector<DeliveryRecord> deliveries_;
  std::map<std::string, std::size_t> delivery_ids_;
  std::map<std::string, Checkpoint> checkpoints_;
};

Trace run(const Scenario& scenario);

// Built-in scripts, shipped as JSON under scenarios/.
Scenario scenario_echo_loop();
Scenario scenario_restart_recall();
Scenario scenario_role_divergence();
Scenario scenario_write_filter();

}  // namespace mmp::sim
