#include "mmp/cat7.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <openssl/sha.h>

#include "mmp/error.hpp"

namespace mmp {
namespace {

constexpr char kFieldSep = '\x1F';
constexpr char kRecordSep = '\x1E';
constexpr double kUnitTolerance = 1e-6;

constexpr std::array<std::string_view, kFieldCount> kFieldNames = {
    "focus", "issue", "intent", "motivation", "commitment", "perspective", "mood"};

// 64-bit FNV-1a. Stable across platforms, which is all the embedder needs.
std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool in_unit_range(double x) { return std::isfinite(x) && x >= -1.0 && x <= 1.0; }

}  // namespace

std::string_view field_name(FieldName f) { return kFieldNames[index_of(f)]; }

std::optional<FieldName> parse_field_name(std::string_view name) {
  for (auto f : kFields) {
    if (kFieldNames[index_of(f)] == name) return f;
  }
  return std::nullopt;
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "vector dimensions differ: " + std::to_string(a.size()) + " vs " +
                                                  std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(const Vector& a, const Vector& b) {
  const double d = dot(a, b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(d / (na * nb), -1.0, 1.0);
}

Vector normalized(Vector v) {
  const double n = norm(v);
  if (n == 0.0 || !std::isfinite(n)) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  for (double& x : v) x /= n;
  return v;
}

FieldValue::FieldValue(FieldName name, std::string text, Vector vector, std::optional<Mood> mood)
    : name_(name), text_(std::move(text)), vector_(std::move(vector)), mood_(mood) {
  const auto fname = std::string(field_name(name_));
  if (text_.empty()) throw Error(ErrorCode::EmptyText, "field text is empty", fname);
  if (vector_.empty()) throw Error(ErrorCode::DimensionMismatch, "field vector is empty", fname);
  if (std::abs(norm(vector_) - 1.0) > kUnitTolerance) {
    throw Error(ErrorCode::InvalidHeader, "field vector is not unit length", fname);
  }
  if ((name_ == FieldName::mood) != mood_.has_value()) {
    throw Error(ErrorCode::InvalidHeader, "valence/arousal must be present exactly on mood", fname);
  }
  if (mood_ && !(in_unit_range(mood_->valence) && in_unit_range(mood_->arousal))) {
    throw Error(ErrorCode::MoodOutOfRange, "mood coordinates must lie in [-1, 1]", fname);
  }
}

Cat7Header::Cat7Header(std::vector<FieldValue> fields) {
  std::array<std::optional<FieldValue>, kFieldCount> slots;
  for (auto& fv : fields) {
    auto& slot = slots[index_of(fv.name())];
    if (slot) throw Error(ErrorCode::InvalidHeader, "duplicate field", std::string(field_name(fv.name())));
    slot = std::move(fv);
  }
  fields_.reserve(kFieldCount);
  for (auto f : kFields) {
    auto& slot = slots[index_of(f)];
    if (!slot) throw Error(ErrorCode::InvalidHeader, "missing field", std::string(field_name(f)));
    fields_.push_back(std::move(*slot));
  }
  const auto d = fields_.front().vector().size();
  for (const auto& fv : fields_) {
    if (fv.vector().size() != d) {
      throw Error(ErrorCode::DimensionMismatch, "field vectors differ in dimension",
                  std::string(field_name(fv.name())));
    }
  }
}

bool is_valid_key(std::string_view key) {
  if (key.size() != 36 || key.substr(0, 4) != "cmb-") return false;
  return std::all_of(key.begin() + 4, key.end(),
                     [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

Cmb::Cmb(CmbKey key, NodeId created_by, Timestamp created_at, Cat7Header header, Body body, Lineage lineage)
    : key_(std::move(key)),
      created_by_(std::move(created_by)),
      created_at_(created_at),
      header_(std::move(header)),
      body_(std::move(body)),
      lineage_(std::move(lineage)) {
  if (!is_valid_key(key_)) throw Error(ErrorCode::MalformedCMB, "key does not match ^cmb-[0-9a-f]{32}$", key_);
  if (created_by_.empty()) throw Error(ErrorCode::MalformedCMB, "createdBy is empty", "createdBy");
  if (body_ && !body_->is_object()) throw Error(ErrorCode::MalformedCMB, "body must be an object", "body");
  if (lineage_.ancestors.size() > kMaxAncestors) {
    throw Error(ErrorCode::MalformedCMB, "more than 50 ancestors", "lineage.ancestors");
  }
  const std::set<std::string_view> ancestors(lineage_.ancestors.begin(), lineage_.ancestors.end());
  for (const auto& k : lineage_.parents) {
    if (!is_valid_key(k)) throw Error(ErrorCode::MalformedCMB, "invalid parent key", k);
    if (!ancestors.contains(k)) throw Error(ErrorCode::MalformedCMB, "parent missing from ancestors", k);
  }
  for (const auto& k : lineage_.ancestors) {
    if (!is_valid_key(k)) throw Error(ErrorCode::MalformedCMB, "invalid ancestor key", k);
  }
}

Vector embed_text(std::string_view text, std::size_t dim) {
  if (text.empty()) throw Error(ErrorCode::EmptyText, "cannot embed empty text");
  if (dim < 2) throw Error(ErrorCode::DimensionMismatch, "embedding dimension must be at least 2");
  std::string padded;
  padded.reserve(text.size() + 2);
  padded.push_back(' ');
  for (unsigned char c : text) padded.push_back(static_cast<char>(std::tolower(c)));
  padded.push_back(' ');

  Vector acc(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const auto h = fnv1a(std::string_view(padded).substr(i, 3));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    acc[(h & 0x7fffffffffffffffULL) % dim] += sign;
  }
  if (norm(acc) == 0.0) {
    throw Error(ErrorCode::DegenerateEmbedding, "trigram features cancelled out", std::string(text));
  }
  return normalized(std::move(acc));
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string canonical_bytes(const Cat7Header& header, const Body& body) {
  std::string out;
  for (const auto& fv : header.fields()) {
    out += field_name(fv.name());
    out += kFieldSep;
    out += fv.text();
    out += kFieldSep;
    if (fv.mood()) {
      out += format_double(fv.mood()->valence);
      out += kFieldSep;
      out += format_double(fv.mood()->arousal);
      out += kFieldSep;
    }
    for (std::size_t i = 0; i < fv.vector().size(); ++i) {
      if (i) out += ',';
      out += format_double(fv.vector()[i]);
    }
    out += kRecordSep;
  }
  // nlohmann::json keeps object keys sorted, so dump() is canonical.
  if (body) {
    out += "body";
    out += kFieldSep;
    out += body->dump();
    out += kRecordSep;
  }
  return out;
}

std::string digest128_hex(std::string_view bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> md{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (std::size_t i = 0; i < 16; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

CmbKey derive_key(const Cat7Header& header, const Body& body, const std::optional<CmbKey>& parent_key,
                  const std::optional<NodeId>& receiver) {
  if (parent_key.has_value() != receiver.has_value()) {
    throw Error(ErrorCode::InvalidKeyRequest, "parent key and receiver must be given together");
  }
  std::string input = canonical_bytes(header, body);
  if (parent_key) {
    input += kRecordSep;
    input += *parent_key;
    input += kRecordSep;
    input += *receiver;
  }
  return "cmb-" + digest128_hex(input);
}

Cat7Header embed_header(const FieldTexts& texts, Mood mood, std::size_t dim) {
  if (!in_unit_range(mood.valence) || !in_unit_range(mood.arousal)) {
    throw Error(ErrorCode::MoodOutOfRange, "mood coordinates must lie in [-1, 1]", "mood");
  }
  std::vector<FieldValue> fields;
  fields.reserve(kFieldCount);
  for (auto f : kFields) {
    auto it = texts.find(f);
    if (it == texts.end() || it->second.empty()) {
      throw Error(ErrorCode::EmptyText, "field text is missing or empty", std::string(field_name(f)));
    }
    std::optional<Mood> coords;
    if (f == FieldName::mood) coords = mood;
    fields.emplace_back(f, it->second, embed_text(it->second, dim), coords);
  }
  return Cat7Header(std::move(fields));
}

Cmb make_observation(const NodeId& node_id, const FieldTexts& texts, Mood mood, Body body, Timestamp now,
                     std::size_t dim) {
  auto header = embed_header(texts, mood, dim);
  auto key = derive_key(header, body);
  return Cmb(std::move(key), node_id, now, std::move(header), std::move(body), Lineage{});
}

}  // namespace mmp
