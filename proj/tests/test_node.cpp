#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mmp/node.hpp"
#include "mmp/service.hpp"
#include "mmp/wire.hpp"
#include "test_util.hpp"

using namespace mmp;
using testutil::kT0;
using testutil::texts;

namespace {

StoreConfig config(const std::string& id) {
  StoreConfig c;
  c.node_id = id;
  return c;
}

}  // namespace

TEST_CASE("frames are accounted per sender") {
  Node a(MeshMem::load(config("a")));
  Node b(MeshMem::load(config("b")));
  const auto c0 = a.store().observe(texts("n"), {}, std::nullopt, kT0).cmb;

  auto r = b.on_frame(encode_frame(c0, kT0), "a", kT0 + 1);
  REQUIRE(r.outcome.has_value());
  CHECK(r.outcome->kind == ReceiveKind::stored);
  CHECK(b.peer("a").frames_in == 1);
  CHECK(b.peer("a").last_seen == kT0 + 1);

  auto back = a.on_frame(encode_frame(r.outcome->entry->cmb, kT0 + 2), "b", kT0 + 2);
  CHECK(back.outcome->kind == ReceiveKind::echo_dropped);
  CHECK(a.peer("b").drops.echo == 1);

  auto junk = a.on_frame("{not json", "b", kT0 + 3);
  REQUIRE(junk.error.has_value());
  CHECK(to_string(*junk.error) == "MalformedFrame");
  CHECK_FALSE(junk.outcome.has_value());
  CHECK(a.peer("b").drops.malformed == 1);
  CHECK(a.peer("b").frames_in == 1);
  CHECK(a.total_drops() == DropCounts{.echo = 1, .malformed = 1});
  CHECK(a.store().size() == 1);
}

namespace {

// Minimal in-memory service to exercise request dispatch.
class Fake : public MeshService {
 public:
  MeshMem mem = MeshMem::load(config("f"));
  ObserveResult observe(const FieldTexts& t, Mood m, Body body, const std::optional<NodeId>&) override {
    return {mem.observe(t, m, std::move(body), kT0), {}};
  }
  std::vector<StoredEntry> recall(const FieldTexts& q, std::size_t limit) override { return mem.recall(q, limit); }
  StoredEntry fetch(const CmbKey& key) override { return mem.fetch(key); }
  std::vector<PeerStatus> peers() override { return {}; }
  nlohmann::json status() override { return {{"node", "f"}}; }
};

nlohmann::json fields(const std::string& tag) {
  nlohmann::json j;
  for (const auto& [f, t] : texts(tag)) j[std::string(field_name(f))] = t;
  return j;
}

}  // namespace

TEST_CASE("control requests") {
  Fake svc;
  auto r = handle_request(svc, {{"cmd", "observe"}, {"fields", fields("q")}, {"mood", {{"valence", 0.5}}}});
  REQUIRE(r["ok"] == true);
  const auto key = r["key"].get<std::string>();
  CHECK(handle_request(svc, {{"cmd", "fetch"}, {"key", key}})["ok"] == true);
  auto recall = handle_request(svc, {{"cmd", "recall"}, {"limit", 5}});
  CHECK(recall["records"].size() == 1);

  auto err = handle_request(svc, {{"cmd", "fetch"}, {"key", "cmb-00000000000000000000000000000000"}});
  CHECK(err["ok"] == false);
  CHECK(err["error"]["code"] == "UnknownKey");
  err = handle_request(svc, {{"cmd", "observe"}, {"fields", fields("q")}, {"mood", {{"valence", 0.5}}}});
  CHECK(err["error"]["code"] == "ObserveConflict");
  err = handle_request(svc, {{"cmd", "observe"}, {"fields", fields("z")}, {"mood", {{"arousal", -3}}}});
  CHECK(err["error"]["code"] == "MoodOutOfRange");
  err = handle_request(svc, {{"cmd", "recall"}, {"limit", 0}});
  CHECK(err["error"]["code"] == "InvalidArgument");
  err = handle_request(svc, {{"cmd", "dance"}});
  CHECK(err["error"]["code"] == "InvalidArgument");
  err = handle_request(svc, nlohmann::json::array());
  CHECK(err["ok"] == false);
  CHECK(svc.mem.size() == 1);
}
