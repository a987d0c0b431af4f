#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmp {

// The seven CAT7 fields in canonical order. No extensions, no omissions.
enum class FieldName : std::uint8_t { focus, issue, intent, motivation, commitment, perspective, mood };

inline constexpr std::size_t kFieldCount = 7;
inline constexpr std::array<FieldName, kFieldCount> kFields = {
    FieldName::focus,      FieldName::issue,       FieldName::intent, FieldName::motivation,
    FieldName::commitment, FieldName::perspective, FieldName::mood};

inline constexpr std::size_t kDefaultDim = 32;
inline constexpr std::size_t kMaxAncestors = 50;

std::string_view field_name(FieldName f);
std::optional<FieldName> parse_field_name(std::string_view name);
inline std::size_t index_of(FieldName f) { return static_cast<std::size_t>(f); }

using Vector = std::vector<double>;
using Timestamp = std::int64_t;  // milliseconds since epoch
using NodeId = std::string;
using CmbKey = std::string;

// Per-field value map keyed in canonical field order.
template <typename T>
using PerField = std::array<T, kFieldCount>;

double dot(const Vector& a, const Vector& b);
double norm(const Vector& v);
// Throws ZeroVector / DimensionMismatch.
double cosine(const Vector& a, const Vector& b);
Vector normalized(Vector v);

struct Mood {
  double valence = 0.0;
  double arousal = 0.0;
  bool operator==(const Mood&) const = default;
};

class FieldValue {
 public:
  // Validates nonempty text, unit norm within 1e-6, and that mood coordinates
  // are present exactly when `name` is mood and lie in [-1, 1].
  FieldValue(FieldName name, std::string text, Vector vector, std::optional<Mood> mood = std::nullopt);

  FieldName name() const noexcept { return name_; }
  const std::string& text() const noexcept { return text_; }
  const Vector& vector() const noexcept { return vector_; }
  const std::optional<Mood>& mood() const noexcept { return mood_; }

  bool operator==(const FieldValue&) const = default;

 private:
  FieldName name_;
  std::string text_;
  Vector vector_;
  std::optional<Mood> mood_;
};

class Cat7Header {
 public:
  // Accepts fields in any order; throws InvalidHeader naming the first
  // missing or duplicated field.
  explicit Cat7Header(std::vector<FieldValue> fields);

  const FieldValue& operator[](FieldName f) const { return fields_[index_of(f)]; }
  const std::vector<FieldValue>& fields() const noexcept { return fields_; }
  std::size_t dim() const noexcept { return fields_.front().vector().size(); }

  bool operator==(const Cat7Header&) const = default;

 private:
  std::vector<FieldValue> fields_;  // canonical order
};

// Optional task-specific body. Opaque to the gate; must be an object when present.
using Body = std::optional<nlohmann::json>;

struct Lineage {
  std::vector<CmbKey> parents;
  std::vector<CmbKey> ancestors;
  std::optional<std::string> method;
  bool operator==(const Lineage&) const = default;
};

// Immutable cognitive memory block.
class Cmb {
 public:
  // Validates key format, body shape and lineage invariants. The key is
  // taken as given, not re-derived.
  Cmb(CmbKey key, NodeId created_by, Timestamp created_at, Cat7Header header, Body body, Lineage lineage);

  const CmbKey& key() const noexcept { return key_; }
  const NodeId& created_by() const noexcept { return created_by_; }
  Timestamp created_at() const noexcept { return created_at_; }
  const Cat7Header& header() const noexcept { return header_; }
  const Body& body() const noexcept { return body_; }
  const Lineage& lineage() const noexcept { return lineage_; }

  bool operator==(const Cmb&) const = default;

 private:
  CmbKey key_;
  NodeId created_by_;
  Timestamp created_at_;
  Cat7Header header_;
  Body body_;
  Lineage lineage_;
};

bool is_valid_key(std::string_view key);

// Signed character-trigram feature hashing into `dim` buckets, L2-normalized.
Vector embed_text(std::string_view text, std::size_t dim = kDefaultDim);

// 0x1F between items of a record, 0x1E between records.
std::string canonical_bytes(const Cat7Header& header, const Body& body);

// Observation keys take neither suffix; remix keys take both.
CmbKey derive_key(const Cat7Header& header, const Body& body,
                  const std::optional<CmbKey>& parent_key = std::nullopt,
                  const std::optional<NodeId>& receiver = std::nullopt);

using FieldTexts = std::map<FieldName, std::string>;

Cat7Header embed_header(const FieldTexts& texts, Mood mood, std::size_t dim = kDefaultDim);

Cmb make_observation(const NodeId& node_id, const FieldTexts& texts, Mood mood, Body body, Timestamp now,
                     std::size_t dim = kDefaultDim);

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

// Lowercase hex of the first 128 bits of SHA-256.
std::string digest128_hex(std::string_view bytes);

}  // namespace mmp
