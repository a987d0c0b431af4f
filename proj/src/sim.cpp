#include "mmp/sim.hpp"

#include <algorithm>
#include <fstream>

#include "mmp/config.hpp"
#include "mmp/error.hpp"

namespace mmp::sim {
namespace {

using json = nlohmann::json;

[[noreturn]] void script_error(std::size_t index, const std::string& what) {
  throw Error(ErrorCode::ScriptError, "step " + std::to_string(index) + ": " + what, "step " + std::to_string(index));
}

const json& need(const json& step, const char* key, std::size_t index) {
  auto it = step.find(key);
  if (it == step.end()) script_error(index, std::string("missing '") + key + "'");
  return *it;
}

std::string need_string(const json& step, const char* key, std::size_t index) {
  const auto& v = need(step, key, index);
  if (!v.is_string()) script_error(index, std::string("'") + key + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> opt_string(const json& step, const char* key) {
  auto it = step.find(key);
  if (it == step.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

// Compares a measured count against eq / le / ge bounds in the step.
void compare(std::size_t index, const json& step, double value, const std::string& what) {
  if (step.contains("eq") && value != step["eq"].get<double>()) {
    script_error(index, what + " is " + format_double(value) + ", expected " + step["eq"].dump());
  }
  if (step.contains("le") && value > step["le"].get<double>()) {
    script_error(index, what + " is " + format_double(value) + ", expected <= " + step["le"].dump());
  }
  if (step.contains("ge") && value < step["ge"].get<double>()) {
    script_error(index, what + " is " + format_double(value) + ", expected >= " + step["ge"].dump());
  }
}

std::string outcome_name(const FrameResult& r) {
  if (r.error) return "malformed";
  return std::string(to_string(r.outcome->kind));
}

constexpr std::array<std::string_view, 24> kWords = {
    "mesh",     "rollout", "verify",  "latency", "schema", "memory", "agent",   "lineage",
    "drift",    "anchor",  "restart", "halt",    "ratify", "sprint", "wave",    "corpus",
    "review",   "budget",  "release", "probe",   "gate",   "remix",  "context", "protocol"};
constexpr std::array<std::string_view, 8> kMoods = {"focused", "tired",   "methodical", "curious",
                                                    "anxious", "relaxed", "determined", "sceptical"};

}  // namespace

Scenario Scenario::from_json(const json& j) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::ScriptError, "scenario: " + why, "scenario"); };
  if (!j.is_object()) fail("expected object");
  Scenario s;
  s.name = j.value("name", "scenario");
  s.seed = j.value("seed", std::uint64_t{0});
  s.start_ms = j.value("startMs", s.start_ms);
  if (!j.contains("nodes") || !j["nodes"].is_array() || j["nodes"].empty()) fail("needs a nonempty nodes array");
  std::set<NodeId> ids;
  for (const auto& nj : j["nodes"]) {
    NodeSpec spec;
    spec.id = nj.value("id", "");
    if (spec.id.empty() || !ids.insert(spec.id).second) fail("node ids must be nonempty and unique");
    spec.role = nj.value("role", spec.id);
    if (nj.contains("profile")) spec.profile = profile_from_json(nj["profile"]);
    if (auto it = nj.find("thresholds"); it != nj.end()) {
      spec.thresholds.redundant = it->value("redundant", spec.thresholds.redundant);
      spec.thresholds.aligned = it->value("aligned", spec.thresholds.aligned);
      spec.thresholds.guarded = it->value("guarded", spec.thresholds.guarded);
    }
    spec.beta = nj.value("beta", spec.beta);
    s.nodes.push_back(std::move(spec));
  }
  if (j.contains("steps")) {
    if (!j["steps"].is_array()) fail("steps must be an array");
    for (const auto& step : j["steps"]) {
      if (!step.is_object() || !step.contains("op")) fail("every step needs an op");
      s.steps.push_back(step);
    }
  }
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ScriptError, "cannot open scenario", path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ScriptError, std::string("scenario is not valid JSON: ") + e.what(), path.string());
  }
}

json Trace::to_json() const {
  json out = json::array();
  for (const auto& s : steps) {
    out.push_back({{"index", s.index}, {"op", s.op}, {"detail", s.detail}, {"digests", s.digests}});
  }
  return out;
}

Simulator::Simulator(Scenario scenario, std::filesystem::path work_dir)
    : scenario_(std::move(scenario)), work_dir_(std::move(work_dir)), now_(scenario_.start_ms), rng_(scenario_.seed) {
  if (work_dir_.empty()) {
    const auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto candidate = base / ("mmp-sim-" + std::to_string(rd()) + std::to_string(rd()));
      if (std::filesystem::create_directory(candidate)) {
        work_dir_ = candidate;
        break;
      }
    }
    if (work_dir_.empty()) throw Error(ErrorCode::StorageFailure, "cannot create a simulator work directory");
    owns_work_dir_ = true;
  } else {
    std::filesystem::create_directories(work_dir_);
  }
  for (const auto& spec : scenario_.nodes) {
    order_.push_back(spec.id);
    specs_[spec.id] = spec;
    std::filesystem::remove(work_dir_ / (spec.id + ".log"));
    nodes_[spec.id] = std::make_unique<Node>(MeshMem::load(store_config(spec)));
  }
}

Simulator::~Simulator() {
  nodes_.clear();
  if (owns_work_dir_) {
    std::error_code ec;
    std::filesystem::remove_all(work_dir_, ec);
  }
}

StoreConfig Simulator::store_config(const NodeSpec& spec) const {
  StoreConfig c;
  c.node_id = spec.id;
  c.role_name = spec.role;
  c.profile = spec.profile;
  c.thresholds = spec.thresholds;
  c.beta = spec.beta;
  c.persistence_path = work_dir_ / (spec.id + ".log");
  return c;
}

Node& Simulator::node(const NodeId& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::ScriptError, "unknown node", id);
  return *it->second;
}

const Cmb& Simulator::labeled(const std::string& label) const {
  auto it = labels_.find(label);
  if (it == labels_.end()) throw Error(ErrorCode::ScriptError, "unknown label", label);
  return it->second;
}

const DeliveryRecord& Simulator::delivery(const std::string& id) const {
  auto it = delivery_ids_.find(id);
  if (it == delivery_ids_.end()) throw Error(ErrorCode::ScriptError, "unknown delivery id", id);
  return deliveries_[it->second];
}

Trace Simulator::run() {
  Trace trace;
  for (std::size_t i = 0; i < scenario_.steps.size(); ++i) {
    TraceStep ts;
    ts.index = i;
    ts.op = scenario_.steps[i].value("op", "");
    try {
      exec(i, scenario_.steps[i], ts);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ScriptError) {
        if (e.detail().starts_with("step ")) throw;
        script_error(i, std::string(e.what()) + ": " + e.detail());
      }
      script_error(i, std::string(to_string(e.code())) + ": " + e.what());
    }
    for (const auto& id : order_) ts.digests[id] = nodes_.at(id)->store().digest();
    trace.steps.push_back(std::move(ts));
  }
  return trace;
}

json Simulator::deliver(std::size_t index, const Cmb& cmb, const NodeId& to, bool strip_lineage,
                        const std::optional<std::string>& as, const std::optional<std::string>& id) {
  auto line = encode_frame(cmb, now_);
  if (strip_lineage) {
    auto j = nlohmann::ordered_json::parse(line);
    j["cmb"]["lineage"]["parents"] = nlohmann::ordered_json::array();
    j["cmb"]["lineage"]["ancestors"] = nlohmann::ordered_json::array();
    line = j.dump();
  }
  auto& target = node(to);
  DeliveryRecord rec{.step = index, .to = to, .key = cmb.key(), .result = target.on_frame(line, cmb.created_by(), now_)};
  json detail{{"to", to}, {"key", cmb.key()}, {"outcome", outcome_name(rec.result)}};
  if (rec.result.outcome && rec.result.outcome->svaf) {
    detail["decision"] = std::string(to_string(rec.result.outcome->svaf->decision));
    detail["totalDrift"] = rec.result.outcome->svaf->total_drift;
  }
  if (rec.result.outcome && rec.result.outcome->entry) {
    detail["remix"] = rec.result.outcome->entry->key();
    if (as) {
      labels_.insert_or_assign(*as, rec.result.outcome->entry->cmb);
      label_order_.push_back(*as);
    }
  }
  if (id) delivery_ids_[*id] = deliveries_.size();
  deliveries_.push_back(std::move(rec));
  return detail;
}

void Simulator::exec(std::size_t index, const json& step, TraceStep& out) {
  const auto op = need_string(step, "op", index);
  if (op == "observe") {
    const auto id = need_string(step, "node", index);
    FieldTexts texts;
    const auto& fj = need(step, "fields", index);
    for (auto it = fj.begin(); it != fj.end(); ++it) {
      auto f = parse_field_name(it.key());
      if (!f) script_error(index, "unknown field " + it.key());
      texts[*f] = it->get<std::string>();
    }
    Mood mood;
    if (auto it = step.find("mood"); it != step.end()) {
      mood.valence = it->value("valence", 0.0);
      mood.arousal = it->value("arousal", 0.0);
    }
    Body body;
    if (auto it = step.find("body"); it != step.end()) body = *it;
    const auto& entry = node(id).store().observe(texts, mood, std::move(body), now_);
    if (auto as = opt_string(step, "as")) {
      labels_.insert_or_assign(*as, entry.cmb);
      label_order_.push_back(*as);
    }
    out.detail = {{"node", id}, {"key", entry.key()}};
  } else if (op == "deliver") {
    const auto& cmb = labeled(need_string(step, "cmb", index));
    const auto to = need_string(step, "to", index);
    out.detail = deliver(index, cmb, to, step.value("stripLineage", false), opt_string(step, "as"),
                         opt_string(step, "id"));
    if (auto expect = opt_string(step, "expect"); expect && out.detail["outcome"] != *expect) {
      script_error(index, "delivery outcome " + out.detail["outcome"].get<std::string>() + ", expected " + *expect);
    }
    if (auto expect = opt_string(step, "expectDecision")) {
      const auto got = out.detail.value("decision", std::string("none"));
      if (got != *expect) script_error(index, "decision " + got + ", expected " + *expect);
    }
  } else if (op == "broadcast") {
    const auto& cmb = labeled(need_string(step, "cmb", index));
    const auto as = opt_string(step, "as");
    const auto id = opt_string(step, "id");
    out.detail = json::array();
    for (const auto& to : order_) {
      if (to == cmb.created_by()) continue;
      out.detail.push_back(deliver(index, cmb, to, false, as ? std::optional(*as + "@" + to) : std::nullopt,
                                   id ? std::optional(*id + "@" + to) : std::nullopt));
    }
  } else if (op == "restart") {
    const auto id = need_string(step, "node", index);
    auto it = nodes_.find(id);
    if (it == nodes_.end()) script_error(index, "unknown node " + id);
    it->second.reset();
    it->second = std::make_unique<Node>(MeshMem::load(store_config(specs_.at(id))));
    out.detail = {{"node", id}, {"storeSize", it->second->store().size()}};
  } else if (op == "advance") {
    const auto ms = need(step, "ms", index).get<Timestamp>();
    if (ms < 0) script_error(index, "the virtual clock only moves forward");
    now_ += ms;
    out.detail = {{"now", now_}};
  } else if (op == "checkpoint") {
    const auto name = need_string(step, "name", index);
    Checkpoint cp{.delivery_count = deliveries_.size()};
    const auto limit = step.value("limit", std::size_t{10});
    for (const auto& id : order_) {
      const auto& store = nodes_.at(id)->store();
      cp.digests[id] = store.digest();
      cp.recall[id] = store.recall(limit);
      for (const auto& e : store.entries()) cp.keys[id].insert(e.key());
    }
    checkpoints_[name] = std::move(cp);
    out.detail = {{"name", name}};
  } else if (op == "random") {
    random_traffic(index, step, out);
  } else if (op == "assert") {
    check(index, step, out);
  } else {
    script_error(index, "unknown op " + op);
  }
}

void Simulator::random_traffic(std::size_t index, const json& step, TraceStep& out) {
  const auto count = need(step, "count", index).get<std::size_t>();
  const auto observe_permille = static_cast<std::uint64_t>(step.value("observeRatio", 0.3) * 1000.0);
  // Raw engine output only: distributions are implementation-defined.
  auto pick = [this](std::size_t n) { return static_cast<std::size_t>(rng_() % n); };
  auto words = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) s += '-';
      s += kWords[pick(kWords.size())];
    }
    return s;
  };
  std::map<std::string, std::size_t> tally;
  for (std::size_t op = 0; op < count; ++op) {
    now_ += 1000;
    const auto label = "rand-" + std::to_string(index) + "-" + std::to_string(op);
    if (label_order_.empty() || rng_() % 1000 < observe_permille) {
      const auto& id = order_[pick(order_.size())];
      FieldTexts texts;
      for (auto f : kFields) texts[f] = f == FieldName::mood ? std::string(kMoods[pick(kMoods.size())]) : words(2 + pick(2));
      const Mood mood{static_cast<double>(static_cast<int>(pick(21)) - 10) / 10.0,
                      static_cast<double>(static_cast<int>(pick(21)) - 10) / 10.0};
      const auto& entry = node(id).store().observe(texts, mood, std::nullopt, now_);
      labels_.insert_or_assign(label, entry.cmb);
      label_order_.push_back(label);
      ++tally["observe"];
    } else {
      const auto source = label_order_[pick(label_order_.size())];
      const auto& to = order_[pick(order_.size())];
      const auto detail = deliver(index, labels_.at(source), to, false, label, std::nullopt);
      ++tally[detail["outcome"].get<std::string>()];
    }
  }
  out.detail = tally;
}

void Simulator::check(std::size_t index, const json& step, TraceStep& out) {
  const auto kind = need_string(step, "check", index);
  out.detail = {{"check", kind}};
  if (kind == "storeSize") {
    const auto id = need_string(step, "node", index);
    compare(index, step, static_cast<double>(node(id).store().size()), id + " store size");
  } else if (kind == "drops") {
    const auto id = need_string(step, "node", index);
    const auto which = need_string(step, "kind", index);
    const auto d = node(id).total_drops();
    double v = 0;
    if (which == "echo") v = static_cast<double>(d.echo);
    else if (which == "redundant") v = static_cast<double>(d.redundant);
    else if (which == "rejected") v = static_cast<double>(d.rejected);
    else if (which == "malformed") v = static_cast<double>(d.malformed);
    else script_error(index, "unknown drop kind " + which);
    compare(index, step, v, id + " " + which + " drops");
  } else if (kind == "outcome") {
    const auto& rec = delivery(need_string(step, "delivery", index));
    const auto want = need_string(step, "eq", index);
    if (outcome_name(rec.result) != want) script_error(index, "outcome " + outcome_name(rec.result) + " != " + want);
  } else if (kind == "decision") {
    const auto& rec = delivery(need_string(step, "delivery", index));
    const auto want = need_string(step, "eq", index);
    if (!rec.result.outcome || !rec.result.outcome->svaf) script_error(index, "gate did not run");
    const auto got = std::string(to_string(rec.result.outcome->svaf->decision));
    if (got != want) script_error(index, "decision " + got + " != " + want);
  } else if (kind == "stored") {
    const auto id = need_string(step, "node", index);
    const auto label = need_string(step, "label", index);
    const bool want = step.value("eq", true);
    const bool got = has_label(label) && node(id).store().contains(labeled(label).key());
    if (got != want) script_error(index, "label " + label + (got ? " is" : " is not") + " stored at " + id);
  } else if (kind == "storedRemixOf") {
    // Whether `node` holds a remix whose parent is the labeled CMB.
    const auto id = need_string(step, "node", index);
    const auto& parent = labeled(need_string(step, "label", index)).key();
    const bool want = step.value("eq", true);
    const auto& entries = node(id).store().entries();
    const bool got = std::any_of(entries.begin(), entries.end(), [&](const StoredEntry& e) {
      return e.lifecycle == Lifecycle::remixed && e.cmb.lineage().parents.front() == parent;
    });
    if (got != want) script_error(index, id + (got ? " holds" : " lacks") + " a remix of " + parent);
  } else if (kind == "digestEquals") {
    const auto id = need_string(step, "node", index);
    const auto& cp = checkpoints_.at(need_string(step, "checkpoint", index));
    if (cp.digests.at(id) != node(id).store().digest()) script_error(index, id + " store digest changed");
  } else if (kind == "recallExtends") {
    const auto id = need_string(step, "node", index);
    const auto& cp = checkpoints_.at(need_string(step, "checkpoint", index));
    const auto max_new = step.value("maxNew", std::size_t{1});
    const auto& before = cp.recall.at(id);
    const auto now_list = node(id).store().recall(std::max<std::size_t>(before.size(), step.value("limit", 10)));
    std::vector<StoredEntry> old_only;
    std::size_t fresh = 0;
    for (const auto& e : now_list) {
      if (cp.keys.at(id).contains(e.key())) {
        old_only.push_back(e);
      } else {
        ++fresh;
      }
    }
    if (fresh > max_new) script_error(index, id + " recall gained " + std::to_string(fresh) + " new entries");
    const std::vector<StoredEntry> prefix(before.begin(), before.begin() + std::min(before.size(), old_only.size()));
    if (old_only.size() < std::min(before.size(), now_list.size() - fresh) || prefix != old_only) {
      script_error(index, id + " recall no longer matches the checkpoint");
    }
    out.detail["new"] = fresh;
  } else if (kind == "deliveriesSince") {
    const auto& cp = checkpoints_.at(need_string(step, "checkpoint", index));
    const auto id = opt_string(step, "node");
    std::size_t n = 0;
    for (std::size_t i = cp.delivery_count; i < deliveries_.size(); ++i) {
      if (!id || deliveries_[i].to == *id) ++n;
    }
    compare(index, step, static_cast<double>(n), "deliveries since checkpoint");
  } else if (kind == "totalDriftDiffers") {
    const auto& a = delivery(need_string(step, "a", index));
    const auto& b = delivery(need_string(step, "b", index));
    if (!a.result.outcome || !a.result.outcome->svaf || !b.result.outcome || !b.result.outcome->svaf) {
      script_error(index, "both deliveries must have run the gate");
    }
    const double da = a.result.outcome->svaf->total_drift;
    const double db = b.result.outcome->svaf->total_drift;
    out.detail["a"] = da;
    out.detail["b"] = db;
    if (da == db) script_error(index, "total drifts are equal (" + format_double(da) + ")");
  } else if (kind == "noSelfReentry") {
    // No node holds a remix descending from one of its own CMBs.
    for (const auto& id : order_) {
      const auto& store = node(id).store();
      for (const auto& e : store.entries()) {
        if (e.lifecycle != Lifecycle::remixed) continue;
        for (const auto& k : e.cmb.lineage().ancestors) {
          if (store.lineage().is_self(k)) script_error(index, id + " stored " + e.key() + " descending from own " + k);
        }
      }
    }
  } else if (kind == "remixesOf") {
    // Stored remixes anywhere in the mesh descending from the labeled CMB.
    const auto& origin = labeled(need_string(step, "label", index)).key();
    std::size_t n = 0;
    for (const auto& id : order_) {
      for (const auto& e : node(id).store().entries()) {
        const auto& anc = e.cmb.lineage().ancestors;
        if (std::find(anc.begin(), anc.end(), origin) != anc.end()) ++n;
      }
    }
    out.detail["count"] = n;
    compare(index, step, static_cast<double>(n), "remixes of " + origin);
  } else if (kind == "invariants") {
    std::size_t remixes = 0;
    for (const auto& id : order_) {
      const auto& store = node(id).store();
      if (auto bad = store.invariant_violation(); !bad.empty()) script_error(index, id + ": " + bad);
      for (const auto& e : store.entries()) remixes += e.lifecycle == Lifecycle::remixed;
    }
    out.detail["remixes"] = remixes;
    if (step.contains("minRemixes")) compare(index, json{{"ge", step["minRemixes"]}}, static_cast<double>(remixes), "remixes");
  } else {
    script_error(index, "unknown check " + kind);
  }
}

Trace run(const Scenario& scenario) {
  Simulator sim(scenario);
  return sim.run();
}

}  // namespace mmp::sim
