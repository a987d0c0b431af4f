#include "mmp/wire.hpp"

#include <cmath>
#include <set>

#include "mmp/error.hpp"

namespace mmp {
namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void violation(std::string field, std::string reason) {
  throw Error(ErrorCode::SchemaViolation, reason, std::move(field));
}

const ojson& require(const ojson& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) violation(where.empty() ? key : where + "." + key, "missing");
  return *it;
}

std::string require_string(const ojson& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) violation(where.empty() ? key : where + "." + key, "expected string");
  return v.get<std::string>();
}

Timestamp require_timestamp(const ojson& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number_integer()) violation(where.empty() ? key : where + "." + key, "expected integer milliseconds");
  return v.get<Timestamp>();
}

double require_number(const ojson& v, const std::string& field) {
  if (!v.is_number()) violation(field, "expected number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) violation(field, "non-finite number");
  return d;
}

std::vector<CmbKey> key_list(const ojson& v, const std::string& field) {
  if (!v.is_array()) violation(field, "expected array");
  std::vector<CmbKey> out;
  for (const auto& k : v) {
    if (!k.is_string() || !is_valid_key(k.get<std::string>())) violation(field, "invalid key");
    out.push_back(k.get<std::string>());
  }
  return out;
}

void reject_unknown(const ojson& obj, std::initializer_list<std::string_view> known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || it.key() == k;
    if (!ok) violation(where + "." + it.key(), "unknown key");
  }
}

ojson number_json(double v) {
  if (std::trunc(v) == v && std::abs(v) < 9.0e15) return ojson(static_cast<std::int64_t>(v));
  return ojson(v);
}

FieldValue field_from_json(FieldName f, const ojson& j, const WireOptions& opts) {
  const std::string where = "fields." + std::string(field_name(f));
  if (!j.is_object()) violation(std::string(field_name(f)), "expected object");
  if (f == FieldName::mood) {
    reject_unknown(j, {"text", "valence", "arousal", "vector"}, where);
  } else {
    reject_unknown(j, {"text", "vector"}, where);
  }
  auto text = require_string(j, "text", where);
  if (text.empty()) violation(std::string(field_name(f)), "empty text");
  const auto& vj = require(j, "vector", where);
  if (!vj.is_array()) violation(std::string(field_name(f)), "vector must be an array");
  if (vj.size() != opts.dim) {
    violation(std::string(field_name(f)),
              "vector length " + std::to_string(vj.size()) + " != " + std::to_string(opts.dim));
  }
  Vector v;
  v.reserve(vj.size());
  for (const auto& x : vj) v.push_back(require_number(x, where + ".vector"));
  const double n = norm(v);
  if (!(std::abs(n - 1.0) <= opts.unit_tolerance)) violation(std::string(field_name(f)), "vector not unit length");
  if (std::abs(n - 1.0) > 1e-9) v = normalized(std::move(v));

  std::optional<Mood> mood;
  if (f == FieldName::mood) {
    Mood m;
    m.valence = require_number(require(j, "valence", where), where + ".valence");
    m.arousal = require_number(require(j, "arousal", where), where + ".arousal");
    if (std::abs(m.valence) > 1.0 || std::abs(m.arousal) > 1.0) violation("mood", "coordinates outside [-1, 1]");
    mood = m;
  }
  return FieldValue(f, std::move(text), std::move(v), mood);
}

ojson svaf_to_json(const SvafResult& r, const ojson& extras) {
  ojson j = ojson::object();
  j["method"] = r.method;
  j["decision"] = std::string(to_string(r.decision));
  j["totalDrift"] = r.total_drift;
  ojson drifts = ojson::object();
  for (auto f : kFields) drifts[std::string(field_name(f))] = r.field_drifts[index_of(f)];
  j["fieldDrifts"] = std::move(drifts);
  if (r.method == kClosedFormMethod) {
    ojson basis = ojson::object();
    for (auto f : kFields) basis[std::string(field_name(f))] = r.anchor_basis_size[index_of(f)];
    j["anchorBasis"] = std::move(basis);
  }
  for (auto it = extras.begin(); it != extras.end(); ++it) j[it.key()] = it.value();
  return j;
}

SvafResult svaf_from_json(const ojson& j, ojson& extras) {
  if (!j.is_object()) violation("svaf", "expected object");
  SvafResult r;
  r.method = require_string(j, "method", "svaf");
  auto decision = parse_decision(require_string(j, "decision", "svaf"));
  if (!decision) violation("svaf.decision", "unknown decision");
  r.decision = *decision;
  r.total_drift = require_number(require(j, "totalDrift", "svaf"), "svaf.totalDrift");
  const auto& drifts = require(j, "fieldDrifts", "svaf");
  if (!drifts.is_object()) violation("svaf.fieldDrifts", "expected object");
  for (auto f : kFields) {
    const std::string name(field_name(f));
    r.field_drifts[index_of(f)] = require_number(require(drifts, name.c_str(), "svaf.fieldDrifts"),
                                                 "svaf.fieldDrifts." + name);
  }
  if (auto it = j.find("anchorBasis"); it != j.end()) {
    if (!it->is_object()) violation("svaf.anchorBasis", "expected object");
    for (auto f : kFields) {
      const std::string name(field_name(f));
      const auto& n = require(*it, name.c_str(), "svaf.anchorBasis");
      if (!n.is_number_unsigned() && !(n.is_number_integer() && n.get<std::int64_t>() >= 0)) {
        violation("svaf.anchorBasis." + name, "expected count");
      }
      r.anchor_basis_size[index_of(f)] = n.get<std::size_t>();
    }
  }
  extras = ojson::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "method" || k == "decision" || k == "totalDrift" || k == "fieldDrifts" || k == "anchorBasis") continue;
    extras[k] = it.value();
  }
  return r;
}

ojson parse_object(std::string_view bytes, ErrorCode code) {
  ojson j;
  try {
    j = ojson::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(code, std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(code, "top level must be an object");
  return j;
}

}  // namespace

std::string_view to_string(Lifecycle l) { return l == Lifecycle::observed ? "observed" : "remixed"; }

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::hot: return "hot";
    case Tier::warm: return "warm";
    case Tier::cold: return "cold";
  }
  return "cold";
}

std::optional<Lifecycle> parse_lifecycle(std::string_view s) {
  if (s == "observed") return Lifecycle::observed;
  if (s == "remixed") return Lifecycle::remixed;
  return std::nullopt;
}

std::optional<Tier> parse_tier(std::string_view s) {
  if (s == "hot") return Tier::hot;
  if (s == "warm") return Tier::warm;
  if (s == "cold") return Tier::cold;
  return std::nullopt;
}

ojson cmb_to_json(const Cmb& cmb) {
  ojson j = ojson::object();
  j["key"] = cmb.key();
  j["createdBy"] = cmb.created_by();
  j["createdAt"] = cmb.created_at();
  ojson fields = ojson::object();
  for (const auto& fv : cmb.header().fields()) {
    ojson f = ojson::object();
    f["text"] = fv.text();
    if (fv.mood()) {
      f["valence"] = fv.mood()->valence;
      f["arousal"] = fv.mood()->arousal;
    }
    f["vector"] = fv.vector();
    fields[std::string(field_name(fv.name()))] = std::move(f);
  }
  j["fields"] = std::move(fields);
  ojson lineage = ojson::object();
  lineage["parents"] = cmb.lineage().parents;
  lineage["ancestors"] = cmb.lineage().ancestors;
  lineage["method"] = cmb.lineage().method ? ojson(*cmb.lineage().method) : ojson(nullptr);
  j["lineage"] = std::move(lineage);
  if (cmb.body()) j["body"] = ojson::parse(cmb.body()->dump());
  return j;
}

Cmb cmb_from_json(const ojson& j, const WireOptions& opts) {
  if (!j.is_object()) violation("cmb", "expected object");
  reject_unknown(j, {"key", "createdBy", "createdAt", "fields", "lineage", "body"}, "cmb");
  auto key = require_string(j, "key", "cmb");
  if (!is_valid_key(key)) violation("key", "does not match ^cmb-[0-9a-f]{32}$");
  auto created_by = require_string(j, "createdBy", "cmb");
  if (created_by.empty()) violation("createdBy", "empty");
  const auto created_at = require_timestamp(j, "createdAt", "cmb");

  const auto& fj = require(j, "fields", "cmb");
  if (!fj.is_object()) violation("fields", "expected object");
  for (auto it = fj.begin(); it != fj.end(); ++it) {
    if (!parse_field_name(it.key())) violation(it.key(), "not a CAT7 field");
  }
  std::vector<FieldValue> fields;
  for (auto f : kFields) {
    auto it = fj.find(std::string(field_name(f)));
    if (it == fj.end()) violation(std::string(field_name(f)), "missing");
    fields.push_back(field_from_json(f, *it, opts));
  }

  const auto& lj = require(j, "lineage", "cmb");
  if (!lj.is_object()) violation("lineage", "expected object");
  reject_unknown(lj, {"parents", "ancestors", "method"}, "lineage");
  Lineage lineage;
  lineage.parents = key_list(require(lj, "parents", "lineage"), "lineage.parents");
  lineage.ancestors = key_list(require(lj, "ancestors", "lineage"), "lineage.ancestors");
  const auto& mj = require(lj, "method", "lineage");
  if (mj.is_string()) {
    lineage.method = mj.get<std::string>();
  } else if (!mj.is_null()) {
    violation("lineage.method", "expected string or null");
  }

  Body body;
  if (auto it = j.find("body"); it != j.end()) {
    if (!it->is_object()) violation("body", "expected object");
    body = nlohmann::json::parse(it->dump());
  }
  try {
    return Cmb(std::move(key), std::move(created_by), created_at, Cat7Header(std::move(fields)), std::move(body),
               std::move(lineage));
  } catch (const Error& e) {
    violation(e.detail().empty() ? "cmb" : e.detail(), e.what());
  }
}

std::string encode_frame(const Cmb& cmb, Timestamp now) {
  return encode_frame(WireFrame{.timestamp = now, .cmb = cmb});
}

std::string encode_frame(const WireFrame& frame) {
  ojson j = ojson::object();
  j["type"] = frame.type;
  j["timestamp"] = frame.timestamp;
  j["cmb"] = cmb_to_json(frame.cmb);
  for (auto it = frame.extensions.begin(); it != frame.extensions.end(); ++it) j[it.key()] = it.value();
  return j.dump();
}

WireFrame decode_frame(std::string_view bytes, const WireOptions& opts) {
  const auto j = parse_object(bytes, ErrorCode::MalformedFrame);
  std::string type{kFrameType};
  if (auto it = j.find("type"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>() != kFrameType) {
      throw Error(ErrorCode::MalformedFrame, "frame type must be \"cmb\"", "type");
    }
  }
  auto cmb = cmb_from_json(require(j, "cmb", ""), opts);
  Timestamp ts = cmb.created_at();
  if (j.contains("timestamp")) ts = require_timestamp(j, "timestamp", "");
  WireFrame frame{.type = std::move(type), .timestamp = ts, .cmb = std::move(cmb)};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "type" || it.key() == "timestamp" || it.key() == "cmb") continue;
    frame.extensions[it.key()] = it.value();
  }
  return frame;
}

std::string encode_entry(const StoredEntry& e) {
  ojson j = ojson::object();
  j["key"] = e.key();
  j["source"] = e.source;
  j["tier"] = std::string(to_string(e.tier));
  j["lifecycle"] = std::string(to_string(e.lifecycle));
  j["storedAt"] = e.stored_at;
  j["cmb"] = cmb_to_json(e.cmb);
  if (e.svaf) j["svaf"] = svaf_to_json(*e.svaf, e.svaf_extras);
  j["anchorWeight"] = number_json(e.anchor_weight);
  if (!e.origin_parents.empty()) j["originParents"] = e.origin_parents;
  for (auto it = e.extensions.begin(); it != e.extensions.end(); ++it) j[it.key()] = it.value();
  return j.dump();
}

StoredEntry decode_entry(std::string_view bytes, const WireOptions& opts) {
  try {
    const auto j = parse_object(bytes, ErrorCode::MalformedEntry);
    auto cmb = cmb_from_json(require(j, "cmb", ""), opts);
    if (auto it = j.find("key"); it != j.end() && (!it->is_string() || it->get<std::string>() != cmb.key())) {
      violation("key", "entry key differs from cmb.key");
    }
    auto lifecycle = parse_lifecycle(require_string(j, "lifecycle", ""));
    if (!lifecycle) violation("lifecycle", "unknown lifecycle");
    auto tier = parse_tier(require_string(j, "tier", ""));
    if (!tier) violation("tier", "unknown tier");

    StoredEntry e{.cmb = std::move(cmb),
                  .source = require_string(j, "source", ""),
                  .stored_at = require_timestamp(j, "storedAt", ""),
                  .lifecycle = *lifecycle,
                  .tier = *tier};
    if (auto it = j.find("anchorWeight"); it != j.end()) {
      e.anchor_weight = require_number(*it, "anchorWeight");
      if (!(e.anchor_weight > 0.0)) violation("anchorWeight", "must be positive");
    }
    if (auto it = j.find("svaf"); it != j.end()) e.svaf = svaf_from_json(*it, e.svaf_extras);
    if ((e.lifecycle == Lifecycle::remixed) != e.svaf.has_value()) {
      violation("svaf", e.svaf ? "svaf block on an observed entry" : "remixed entry without svaf block");
    }
    if (auto it = j.find("originParents"); it != j.end()) e.origin_parents = key_list(*it, "originParents");

    static const std::set<std::string> kKnown = {"key",  "source", "tier",         "lifecycle",    "storedAt",
                                                 "cmb",  "svaf",   "anchorWeight", "originParents"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!kKnown.contains(it.key())) e.extensions[it.key()] = it.value();
    }
    return e;
  } catch (const Error& err) {
    if (err.code() == ErrorCode::MalformedEntry) throw;
    throw Error(ErrorCode::MalformedEntry, err.what(), err.detail());
  }
}

}  // namespace mmp
