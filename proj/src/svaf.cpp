#include "mmp/svaf.hpp"

#include <algorithm>
#include <cmath>

#include "mmp/error.hpp"

namespace mmp {

void RoleProfile::validate() const {
  double sum = 0.0;
  for (auto f : kFields) {
    const double a = alpha[index_of(f)];
    if (!std::isfinite(a) || a < 0.0) {
      throw Error(ErrorCode::InvalidProfile, "alpha must be finite and nonnegative",
                  "alpha." + std::string(field_name(f)));
    }
    sum += a;
  }
  if (!(sum > 0.0)) throw Error(ErrorCode::InvalidProfile, "alpha weights sum to zero", "alpha");
  if (!std::isfinite(lambda_per_ms) || lambda_per_ms < 0.0) {
    throw Error(ErrorCode::InvalidProfile, "lambda must be finite and nonnegative", "lambdaPerMs");
  }
}

double RoleProfile::alpha_sum() const {
  double sum = 0.0;
  for (double a : alpha) sum += a;
  return sum;
}

RoleProfile RoleProfile::uniform(std::string role) {
  RoleProfile p;
  p.node_role = std::move(role);
  return p;
}

RoleProfile RoleProfile::preset(std::string_view name) {
  RoleProfile p = uniform(std::string(name));
  auto set = [&p](FieldName f, double a) { p.alpha[index_of(f)] = a; };
  if (name == "default") return p;
  if (name == "compliance") {
    set(FieldName::commitment, 4.0);
    set(FieldName::focus, 4.0);
  } else if (name == "quality-review") {
    set(FieldName::perspective, 4.0);
    set(FieldName::motivation, 4.0);
  } else if (name == "affect") {
    set(FieldName::mood, 4.0);
  } else {
    throw Error(ErrorCode::InvalidProfile, "unknown profile preset", std::string(name));
  }
  return p;
}

void Thresholds::validate() const {
  if (!(0.0 < redundant && redundant < aligned && aligned < guarded)) {
    throw Error(ErrorCode::InvalidProfile, "thresholds must satisfy 0 < redundant < aligned < guarded",
                "thresholds");
  }
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::redundant: return "redundant";
    case Decision::aligned: return "aligned";
    case Decision::guarded: return "guarded";
    case Decision::rejected: return "rejected";
  }
  return "rejected";
}

std::optional<Decision> parse_decision(std::string_view s) {
  for (auto d : {Decision::redundant, Decision::aligned, Decision::guarded, Decision::rejected}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

double field_drift(const Vector& anchor, const Vector& incoming) { return 1.0 - cosine(anchor, incoming); }

FusedAnchor fuse_anchor_weighted(std::span<const Candidate> candidates, const Vector& incoming, double alpha,
                                 double lambda_per_ms, Timestamp now) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "no stored candidates to fuse");
  if (!std::isfinite(alpha) || alpha < 0.0) throw Error(ErrorCode::InvalidArgument, "alpha must be nonnegative");
  if (!std::isfinite(lambda_per_ms) || lambda_per_ms < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  }
  // alpha is common to every candidate of a field and cancels under
  // normalization; a zero alpha would only make the weights undefined.
  const double role = alpha > 0.0 ? alpha : 1.0;

  Timestamp freshest = candidates.front().created_at;
  for (const auto& c : candidates) freshest = std::max(freshest, c.created_at);
  freshest = std::min(freshest, now);

  FusedAnchor out;
  out.weights.reserve(candidates.size());
  double sum = 0.0;
  for (const auto& c : candidates) {
    if (!(c.confidence >= 0.0 && c.confidence <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "confidence must lie in [0, 1]");
    }
    const double similarity = std::max(cosine(incoming, c.vector), 0.0);
    const double age = static_cast<double>(std::max<Timestamp>(freshest - std::min(c.created_at, now), 0));
    const double w = role * similarity * std::exp(-lambda_per_ms * age) * c.confidence;
    out.weights.push_back(w);
    sum += w;
  }
  if (!(sum > 0.0)) throw Error(ErrorCode::AllWeightsZero, "every candidate has zero fusion weight");

  Vector acc(incoming.size(), 0.0);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    out.weights[j] /= sum;
    if (out.weights[j] > 0.0) ++out.basis_size;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += out.weights[j] * candidates[j].vector[i];
  }
  out.anchor = normalized(std::move(acc));
  return out;
}

Vector fuse_anchor(std::span<const Candidate> candidates, const Vector& incoming, double alpha,
                   double lambda_per_ms, Timestamp now) {
  return fuse_anchor_weighted(candidates, incoming, alpha, lambda_per_ms, now).anchor;
}

double total_drift(const PerField<double>& drifts, const RoleProfile& profile) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    num += profile.alpha[i] * drifts[i];
    den += profile.alpha[i];
  }
  return num / den;
}

Classification classify(const PerField<double>& drifts, const RoleProfile& profile, const Thresholds& th) {
  double max_drift = 0.0;
  for (auto f : kFields) {
    const double d = drifts[index_of(f)];
    if (!(d >= 0.0 && d <= 2.0)) {
      throw Error(ErrorCode::InvalidArgument, "drift outside [0, 2]", std::string(field_name(f)));
    }
    max_drift = std::max(max_drift, d);
  }
  Classification c;
  c.total_drift = total_drift(drifts, profile);
  if (max_drift < th.redundant) {
    c.decision = Decision::redundant;
  } else if (c.total_drift <= th.aligned) {
    c.decision = Decision::aligned;
  } else if (c.total_drift <= th.guarded) {
    c.decision = Decision::guarded;
  } else {
    c.decision = Decision::rejected;
  }
  return c;
}

Classification classify(const std::map<FieldName, double>& drifts, const RoleProfile& profile,
                        const Thresholds& th) {
  PerField<double> dense{};
  for (auto f : kFields) {
    auto it = drifts.find(f);
    if (it == drifts.end()) throw Error(ErrorCode::MissingField, "drift missing", std::string(field_name(f)));
    dense[index_of(f)] = it->second;
  }
  return classify(dense, profile, th);
}

bool StoreView::empty() const {
  return std::all_of(fields.begin(), fields.end(), [](const auto& c) { return c.empty(); });
}

Evaluation evaluate_detailed(const StoreView& view, const Cmb& incoming, const RoleProfile& profile,
                             const Thresholds& th, Timestamp now) {
  Evaluation ev;
  auto& r = ev.result;
  if (view.empty()) {
    // Cold start: nothing to anchor against, admit with attention.
    r.field_drifts.fill(kAbsentDrift);
    r.total_drift = total_drift(r.field_drifts, profile);
    r.decision = Decision::guarded;
    return ev;
  }
  for (auto f : kFields) {
    const auto i = index_of(f);
    const auto& in = incoming.header()[f].vector();
    const auto& candidates = view.fields[i];
    if (candidates.empty()) {
      r.field_drifts[i] = kAbsentDrift;
      continue;
    }
    try {
      auto fused = fuse_anchor_weighted(candidates, in, profile.alpha[i], profile.lambda_per_ms, now);
      r.field_drifts[i] = std::clamp(field_drift(fused.anchor, in), 0.0, 2.0);
      r.anchor_basis_size[i] = fused.basis_size;
      ev.anchors[i] = std::move(fused.anchor);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllWeightsZero) throw;
      r.field_drifts[i] = kAbsentDrift;
    }
  }
  const auto c = classify(r.field_drifts, profile, th);
  r.total_drift = c.total_drift;
  r.decision = c.decision;
  return ev;
}

SvafResult evaluate(const StoreView& view, const Cmb& incoming, const RoleProfile& profile, const Thresholds& th,
                    Timestamp now) {
  return evaluate_detailed(view, incoming, profile, th, now).result;
}

}  // namespace mmp
