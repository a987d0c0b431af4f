#include "mmp/node.hpp"

#include "mmp/error.hpp"

namespace mmp {

DropCounts& DropCounts::operator+=(const DropCounts& o) {
  echo += o.echo;
  redundant += o.redundant;
  rejected += o.rejected;
  malformed += o.malformed;
  return *this;
}

nlohmann::json to_json(const DropCounts& d) {
  return {{"echo", d.echo}, {"redundant", d.redundant}, {"rejected", d.rejected}, {"malformed", d.malformed}};
}

nlohmann::json to_json(const PeerStatus& s) {
  return {{"id", s.id},
          {"address", s.address},
          {"connected", s.connected},
          {"lastSeen", s.last_seen},
          {"framesIn", s.frames_in},
          {"framesOut", s.frames_out},
          {"sendFailures", s.send_failures},
          {"drops", to_json(s.drops)}};
}

PeerStatus& Node::peer(const NodeId& id) {
  auto [it, inserted] = peers_.try_emplace(id);
  if (inserted) it->second.id = id;
  return it->second;
}

DropCounts Node::total_drops() const {
  DropCounts total;
  for (const auto& [_, p] : peers_) total += p.drops;
  return total;
}

FrameResult Node::on_frame(std::string_view line, const NodeId& from, Timestamp now) {
  auto& stats = peer(from);
  stats.last_seen = now;
  FrameResult result;
  try {
    auto frame = decode_frame(line, WireOptions{.dim = mem_.config().dim});
    ++stats.frames_in;
    result.outcome = mem_.receive(frame.cmb, now);
  } catch (const Error& e) {
    // A local storage fault is not the sender's doing.
    if (e.code() != ErrorCode::StorageFailure) ++stats.drops.malformed;
    result.error = e.code();
    result.error_message = e.what();
    return result;
  }
  switch (result.outcome->kind) {
    case ReceiveKind::echo_dropped: ++stats.drops.echo; break;
    case ReceiveKind::redundant_dropped: ++stats.drops.redundant; break;
    case ReceiveKind::rejected_dropped: ++stats.drops.rejected; break;
    default: break;
  }
  return result;
}

}  // namespace mmp
