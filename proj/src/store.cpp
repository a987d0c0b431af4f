#include "mmp/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmp/error.hpp"
#include "mmp/wire.hpp"

namespace mmp {
namespace {

[[noreturn]] void storage_failure(const std::string& what, const std::filesystem::path& path) {
  throw Error(ErrorCode::StorageFailure, what + ": " + std::strerror(errno), path.string());
}

void write_all(int fd, std::string_view bytes, const std::filesystem::path& path) {
  while (!bytes.empty()) {
    const auto n = ::write(fd, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      storage_failure("write failed", path);
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

Tier tier_for_age(Timestamp age, const StoreConfig& cfg) {
  if (age < cfg.warm_after_ms) return Tier::hot;
  if (age < cfg.cold_after_ms) return Tier::warm;
  return Tier::cold;
}

}  // namespace

std::string_view to_string(ReceiveKind k) {
  switch (k) {
    case ReceiveKind::stored: return "stored";
    case ReceiveKind::duplicate: return "duplicate";
    case ReceiveKind::echo_dropped: return "echo_dropped";
    case ReceiveKind::redundant_dropped: return "redundant_dropped";
    case ReceiveKind::rejected_dropped: return "rejected_dropped";
  }
  return "duplicate";
}

void StoreConfig::validate() const {
  if (node_id.empty()) throw Error(ErrorCode::InvalidConfig, "node id is empty", "nodeId");
  profile.validate();
  thresholds.validate();
  if (dim < 2) throw Error(ErrorCode::InvalidConfig, "embedding dimension must be at least 2", "dim");
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::InvalidConfig, "beta must lie in [0, 1]", "beta");
  if (ttl_ms <= 0) throw Error(ErrorCode::InvalidConfig, "ttl must be positive", "ttlMs");
  if (!(0 < warm_after_ms && warm_after_ms < cold_after_ms)) {
    throw Error(ErrorCode::InvalidConfig, "tier ages must satisfy 0 < warm < cold", "tierAges");
  }
}

MeshMem::MeshMem(StoreConfig config) : config_(std::move(config)), lineage_(config_.node_id) {
  config_.validate();
}

MeshMem MeshMem::load(StoreConfig config) {
  MeshMem mem(std::move(config));
  const auto& path = mem.config_.persistence_path;
  if (path.empty() || !std::filesystem::exists(path)) return mem;

  std::ifstream in(path, std::ios::binary);
  if (!in) storage_failure("cannot open store", path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();

  const WireOptions opts{.dim = mem.config_.dim};
  std::size_t pos = 0;
  std::size_t record = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    const auto tag = "record " + std::to_string(record);
    if (nl == std::string::npos) throw Error(ErrorCode::CorruptStore, "truncated record (no newline)", tag);
    try {
      mem.add_entry(decode_entry(std::string_view(content).substr(pos, nl - pos), opts));
    } catch (const Error& e) {
      throw Error(ErrorCode::CorruptStore, std::string(e.what()), tag);
    }
    pos = nl + 1;
    ++record;
  }
  if (auto bad = mem.invariant_violation(); !bad.empty()) throw Error(ErrorCode::CorruptStore, bad, "invariants");
  return mem;
}

void MeshMem::add_entry(StoredEntry entry) {
  if (by_key_.contains(entry.key())) throw Error(ErrorCode::DuplicateKey, "entry already stored", entry.key());
  if (entry.lifecycle == Lifecycle::remixed) {
    if (entry.cmb.lineage().parents.size() != 1) {
      throw Error(ErrorCode::MalformedEntry, "remix must have exactly one parent", entry.key());
    }
    const auto& origin = entry.cmb.lineage().parents.front();
    if (!lineage_.contains(origin)) lineage_.insert_foreign(origin, entry.origin_parents);
  }
  lineage_.insert(entry.cmb, entry.stored_at);
  by_key_.emplace(entry.key(), entries_.size());
  entries_.push_back(std::move(entry));
}

void MeshMem::rebuild_key_index() {
  by_key_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) by_key_.emplace(entries_[i].key(), i);
}

void MeshMem::append_record(const std::string& line) const {
  const auto& path = config_.persistence_path;
  if (path.empty()) return;
  if (path.has_parent_path() && !std::filesystem::exists(path.parent_path())) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot create store directory: " + ec.message(), path.string());
  }
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) storage_failure("cannot open store", path);
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    storage_failure("cannot stat store", path);
  }
  try {
    write_all(fd, line + "\n", path);
    if (::fsync(fd) != 0) storage_failure("fsync failed", path);
  } catch (...) {
    // Drop any partial record so the log stays loadable.
    [[maybe_unused]] auto rc = ::ftruncate(fd, st.st_size);
    ::close(fd);
    throw;
  }
  ::close(fd);
}

void MeshMem::save() const {
  const auto& path = config_.persistence_path;
  if (path.empty()) return;
  auto tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_TRUNC | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) storage_failure("cannot open compaction file", tmp);
  try {
    write_all(fd, serialized(), tmp);
    if (::fsync(fd) != 0) storage_failure("fsync failed", tmp);
  } catch (...) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) storage_failure("rename failed", path);
}

std::string MeshMem::serialized() const {
  std::string out;
  for (const auto& e : entries_) {
    out += encode_entry(e);
    out += '\n';
  }
  return out;
}

std::string MeshMem::digest() const { return digest128_hex(serialized()); }

const StoredEntry& MeshMem::observe(const FieldTexts& texts, Mood mood, Body body, Timestamp now) {
  auto cmb = make_observation(config_.node_id, texts, mood, std::move(body), now, config_.dim);
  if (by_key_.contains(cmb.key()) || lineage_.contains(cmb.key())) {
    throw Error(ErrorCode::ObserveConflict, "an identical observation is already stored", cmb.key());
  }
  StoredEntry entry{.cmb = std::move(cmb),
                    .source = config_.node_id,
                    .stored_at = now,
                    .lifecycle = Lifecycle::observed,
                    .tier = Tier::hot};
  append_record(encode_entry(entry));
  add_entry(std::move(entry));
  return entries_.back();
}

StoreView MeshMem::view() const {
  StoreView v;
  for (auto f : kFields) v.fields[index_of(f)].reserve(entries_.size());
  for (const auto& e : entries_) {
    const double c = config_.confidence ? config_.confidence(e) : 1.0;
    for (const auto& fv : e.cmb.header().fields()) {
      v.fields[index_of(fv.name())].push_back(Candidate{fv.vector(), e.cmb.created_at(), c});
    }
  }
  return v;
}

Evaluation MeshMem::evaluate(const Cmb& incoming, Timestamp now) const {
  return evaluate_detailed(view(), incoming, config_.profile, config_.thresholds, now);
}

Cmb MeshMem::remix(const Cmb& incoming, const Evaluation& evaluation, Timestamp now) const {
  if (!is_admitted(evaluation.result.decision)) {
    throw Error(ErrorCode::NotAdmitted,
                "cannot remix a CMB classified " + std::string(to_string(evaluation.result.decision)),
                incoming.key());
  }
  const double beta = config_.beta;
  std::vector<FieldValue> fields;
  fields.reserve(kFieldCount);
  for (const auto& in : incoming.header().fields()) {
    const auto& anchor = evaluation.anchors[index_of(in.name())];
    Vector v = in.vector();
    if (anchor) {
      Vector blend(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) blend[i] = beta * (*anchor)[i] + (1.0 - beta) * v[i];
      if (norm(blend) > 0.0) v = normalized(std::move(blend));
    }
    std::string text = in.name() == FieldName::perspective ? config_.role() : in.text();
    fields.emplace_back(in.name(), std::move(text), std::move(v), in.mood());
  }
  Cat7Header header(std::move(fields));

  Lineage lineage;
  lineage.parents = {incoming.key()};
  lineage.ancestors = {incoming.key()};
  for (const auto& k : incoming.lineage().ancestors) {
    if (lineage.ancestors.size() >= kMaxAncestors) break;
    if (std::find(lineage.ancestors.begin(), lineage.ancestors.end(), k) == lineage.ancestors.end()) {
      lineage.ancestors.push_back(k);
    }
  }
  lineage.method = std::string(kClosedFormMethod);

  auto key = derive_key(header, incoming.body(), incoming.key(), config_.node_id);
  return Cmb(std::move(key), config_.node_id, now, std::move(header), incoming.body(), std::move(lineage));
}

ReceiveOutcome MeshMem::receive(const Cmb& incoming, Timestamp now) {
  if (incoming.header().dim() != config_.dim) {
    throw Error(ErrorCode::MalformedCMB, "vector dimension does not match this node", incoming.key());
  }
  const auto& parents = incoming.lineage().parents;
  if (std::find(parents.begin(), parents.end(), incoming.key()) != parents.end()) {
    throw Error(ErrorCode::MalformedCMB, "CMB lists itself as a parent", incoming.key());
  }

  ReceiveOutcome out;
  if (by_key_.contains(incoming.key()) || lineage_.contains(incoming.key())) {
    out.kind = ReceiveKind::duplicate;
    return out;
  }
  if (auto src = lineage_.echo_source(incoming)) {
    out.kind = ReceiveKind::echo_dropped;
    out.echo_of = std::move(src);
    return out;
  }

  auto ev = evaluate(incoming, now);
  out.svaf = ev.result;
  switch (ev.result.decision) {
    case Decision::redundant: out.kind = ReceiveKind::redundant_dropped; return out;
    case Decision::rejected: out.kind = ReceiveKind::rejected_dropped; return out;
    default: break;
  }

  try {
    lineage_.check_insertable(incoming.key(), parents);
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedCMB, e.what(), incoming.key());
  }
  auto remixed = remix(incoming, ev, now);
  if (by_key_.contains(remixed.key()) || lineage_.contains(remixed.key())) {
    out.kind = ReceiveKind::duplicate;
    return out;
  }
  StoredEntry entry{.cmb = std::move(remixed),
                    .source = incoming.created_by() + "+" + config_.node_id,
                    .stored_at = now,
                    .lifecycle = Lifecycle::remixed,
                    .tier = Tier::hot,
                    .svaf = ev.result,
                    .origin_parents = parents};
  append_record(encode_entry(entry));
  add_entry(entry);
  out.kind = ReceiveKind::stored;
  out.entry = std::move(entry);
  return out;
}

std::vector<StoredEntry> MeshMem::recall(const FieldTexts& query, std::size_t limit) const {
  if (limit == 0) throw Error(ErrorCode::InvalidArgument, "recall limit must be at least 1");
  std::vector<std::pair<double, const StoredEntry*>> scored;
  scored.reserve(entries_.size());
  if (query.empty()) {
    for (const auto& e : entries_) scored.emplace_back(0.0, &e);
  } else {
    std::vector<std::pair<FieldName, Vector>> probes;
    double alpha_sum = 0.0;
    for (const auto& [f, text] : query) {
      probes.emplace_back(f, embed_text(text, config_.dim));
      alpha_sum += config_.profile.alpha[index_of(f)];
    }
    const bool uniform = !(alpha_sum > 0.0);
    for (const auto& e : entries_) {
      double num = 0.0;
      double den = 0.0;
      for (const auto& [f, probe] : probes) {
        const double a = uniform ? 1.0 : config_.profile.alpha[index_of(f)];
        num += a * cosine(probe, e.cmb.header()[f].vector());
        den += a;
      }
      scored.emplace_back(num / den, &e);
    }
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    if (a.second->stored_at != b.second->stored_at) return a.second->stored_at > b.second->stored_at;
    return a.second->key() < b.second->key();
  });
  std::vector<StoredEntry> out;
  for (std::size_t i = 0; i < scored.size() && i < limit; ++i) out.push_back(*scored[i].second);
  return out;
}

const StoredEntry& MeshMem::fetch(const CmbKey& key) const {
  auto it = by_key_.find(key);
  if (it == by_key_.end()) throw Error(ErrorCode::UnknownKey, "no stored entry with this key", key);
  return entries_[it->second];
}

std::set<CmbKey> MeshMem::prune(Timestamp now) {
  auto next_lineage = lineage_;
  auto removed = next_lineage.prune(now, config_.ttl_ms);
  std::vector<StoredEntry> kept;
  kept.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (!removed.contains(e.key())) kept.push_back(e);
  }
  std::swap(entries_, kept);
  try {
    save();
  } catch (...) {
    std::swap(entries_, kept);
    throw;
  }
  lineage_ = std::move(next_lineage);
  rebuild_key_index();
  return removed;
}

std::size_t MeshMem::demote_tiers(Timestamp now) {
  auto next = entries_;
  std::size_t changed = 0;
  for (auto& e : next) {
    const auto t = tier_for_age(now - e.stored_at, config_);
    if (static_cast<int>(t) > static_cast<int>(e.tier)) {
      e.tier = t;
      ++changed;
    }
  }
  if (changed == 0) return 0;
  std::swap(entries_, next);
  try {
    save();
  } catch (...) {
    std::swap(entries_, next);
    throw;
  }
  return changed;
}

std::string MeshMem::invariant_violation() const {
  for (const auto& e : entries_) {
    const auto& k = e.key();
    if (e.cmb.created_by() != config_.node_id) return k + ": createdBy is not this node";
    if (e.lifecycle == Lifecycle::observed) {
      if (e.svaf) return k + ": observed entry carries an svaf block";
      if (!e.cmb.lineage().parents.empty()) return k + ": observed entry has parents";
    } else {
      if (!e.svaf || !is_admitted(e.svaf->decision)) return k + ": remix without an admitting decision";
      if (e.cmb.lineage().parents.size() != 1) return k + ": remix must have exactly one parent";
    }
  }
  return {};
}

}  // namespace mmp
