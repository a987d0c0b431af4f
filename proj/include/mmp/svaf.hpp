#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmp/cat7.hpp"

namespace mmp {

// Per-node field weights. lambda_per_ms drives the recency decay of stored
// candidates; the default is a one-hour half-life.
struct RoleProfile {
  std::string node_role = "default";
  PerField<double> alpha = {1, 1, 1, 1, 1, 1, 1};
  double lambda_per_ms = kDefaultLambdaPerMs;

  static constexpr double kDefaultLambdaPerMs = 0.69314718055994530942 / 3'600'000.0;

  // Throws InvalidProfile unless every alpha is finite and nonnegative with a
  // positive sum, and lambda is finite and nonnegative.
  void validate() const;
  double alpha_sum() const;

  static RoleProfile uniform(std::string role = "default");
  // "default", "compliance" (commitment+focus), "quality-review"
  // (perspective+motivation), "affect" (mood). Throws InvalidProfile otherwise.
  static RoleProfile preset(std::string_view name);
};

struct Thresholds {
  double redundant = 0.10;
  double aligned = 0.25;
  double guarded = 0.50;

  // Requires 0 < redundant < aligned < guarded.
  void validate() const;
};

enum class Decision { redundant, aligned, guarded, rejected };

std::string_view to_string(Decision d);
std::optional<Decision> parse_decision(std::string_view s);
inline bool is_admitted(Decision d) { return d == Decision::aligned || d == Decision::guarded; }

inline constexpr std::string_view kClosedFormMethod = "svaf-closed-form";
// Drift recorded for fields that have no anchor (cold start, or every
// candidate anti-aligned).
inline constexpr double kAbsentDrift = 1.0;

struct SvafResult {
  PerField<double> field_drifts{};
  double total_drift = 0.0;
  Decision decision = Decision::rejected;
  std::string method{kClosedFormMethod};
  PerField<std::size_t> anchor_basis_size{};

  bool operator==(const SvafResult&) const = default;
};

struct Candidate {
  Vector vector;
  Timestamp created_at = 0;
  double confidence = 1.0;
};

struct FusedAnchor {
  Vector anchor;                // unit length
  std::vector<double> weights;  // normalized, one per candidate, sums to 1
  std::size_t basis_size = 0;   // candidates with nonzero weight
};

// 1 - cos(anchor, incoming), in [0, 2].
double field_drift(const Vector& anchor, const Vector& incoming);

// Weighted average of candidate vectors with weights proportional to
// alpha * max(cos, 0) * exp(-lambda * age) * confidence, normalized to sum 1,
// then rescaled to unit length. Ages are measured relative to the freshest
// candidate so the common decay factor never underflows; a candidate dated
// after `now` is treated as age zero.
FusedAnchor fuse_anchor_weighted(std::span<const Candidate> candidates, const Vector& incoming, double alpha,
                                 double lambda_per_ms, Timestamp now);
Vector fuse_anchor(std::span<const Candidate> candidates, const Vector& incoming, double alpha,
                   double lambda_per_ms, Timestamp now);

struct Classification {
  double total_drift = 0.0;
  Decision decision = Decision::rejected;
};

double total_drift(const PerField<double>& drifts, const RoleProfile& profile);
Classification classify(const PerField<double>& drifts, const RoleProfile& profile, const Thresholds& th);
// Throws MissingField when any of the seven drifts is absent.
Classification classify(const std::map<FieldName, double>& drifts, const RoleProfile& profile,
                        const Thresholds& th);

// Candidate vectors drawn from the receiver's own store, one list per field.
struct StoreView {
  PerField<std::vector<Candidate>> fields;
  bool empty() const;
};

struct Evaluation {
  SvafResult result;
  PerField<std::optional<Vector>> anchors;
};

Evaluation evaluate_detailed(const StoreView& view, const Cmb& incoming, const RoleProfile& profile,
                             const Thresholds& th, Timestamp now);
SvafResult evaluate(const StoreView& view, const Cmb& incoming, const RoleProfile& profile, const Thresholds& th,
                    Timestamp now);

}  // namespace mmp
