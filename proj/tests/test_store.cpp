#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "mmp/store.hpp"
#include "mmp/wire.hpp"
#include "test_util.hpp"

using namespace mmp;
using testutil::error_code_of;
using testutil::kT0;
using testutil::texts;

namespace {

StoreConfig config(const std::string& id, const std::filesystem::path& path = {}) {
  StoreConfig c;
  c.node_id = id;
  c.role_name = id + "-role";
  c.persistence_path = path;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

FieldTexts variant(const std::string& base, FieldName f, const std::string& text) {
  auto t = texts(base);
  t[f] = text;
  return t;
}

std::string detail_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.detail();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("observe") {
  auto m = MeshMem::load(config("a"));
  const auto& e = m.observe(texts("x"), {0.2, 0.3}, std::nullopt, kT0);
  CHECK(m.size() == 1);
  CHECK(e.lifecycle == Lifecycle::observed);
  CHECK(e.tier == Tier::hot);
  CHECK(e.source == "a");
  CHECK_FALSE(e.svaf.has_value());
  CHECK(e.cmb.lineage().parents.empty());
  CHECK(m.lineage().is_self(e.key()));

  CHECK(error_code_of([&] { m.observe(texts("x"), {0.2, 0.3}, std::nullopt, kT0); }) == ErrorCode::ObserveConflict);
  CHECK(error_code_of([&] { m.observe(variant("y", FieldName::focus, ""), {}, std::nullopt, kT0); }) ==
        ErrorCode::EmptyText);
  CHECK(error_code_of([&] { m.observe(texts("y"), {2.0, 0.0}, std::nullopt, kT0); }) == ErrorCode::MoodOutOfRange);
  CHECK(m.size() == 1);
}

TEST_CASE("remix") {
  auto a = MeshMem::load(config("a"));
  auto b = MeshMem::load(config("b"));
  const auto& c0 = a.observe(texts("r"), {0.2, 0.3}, nlohmann::json{{"task", 7}}, kT0).cmb;

  SUBCASE("cold start keeps the incoming vectors") {
    auto ev = b.evaluate(c0, kT0 + 10);
    REQUIRE(ev.result.decision == Decision::guarded);
    auto c1 = b.remix(c0, ev, kT0 + 10);
    CHECK(c1.lineage().parents == std::vector<CmbKey>{c0.key()});
    CHECK(c1.lineage().ancestors == std::vector<CmbKey>{c0.key()});
    CHECK(c1.lineage().method == "svaf-closed-form");
    CHECK(c1.key() != c0.key());
    CHECK(c1.key() == derive_key(c1.header(), c1.body(), c0.key(), "b"));
    CHECK(c1.created_by() == "b");
    CHECK(c1.body() == c0.body());
    for (auto f : kFields) {
      CHECK(c1.header()[f].vector() == c0.header()[f].vector());
      if (f == FieldName::perspective) {
        CHECK(c1.header()[f].text() == "b-role");
      } else {
        CHECK(c1.header()[f].text() == c0.header()[f].text());
      }
    }
    CHECK(c1.header()[FieldName::mood].mood() == Mood{0.2, 0.3});
  }
  SUBCASE("warm store blends with the anchor") {
    b.observe(variant("r", FieldName::intent, "a rather different intent"), {0.0, 0.0}, std::nullopt, kT0);
    auto ev = b.evaluate(c0, kT0 + 10);
    REQUIRE(is_admitted(ev.result.decision));
    auto c1 = b.remix(c0, ev, kT0 + 10);
    for (auto f : kFields) {
      const auto i = index_of(f);
      REQUIRE(ev.anchors[i].has_value());
      Vector want(32);
      for (std::size_t d = 0; d < 32; ++d) want[d] = 0.5 * (*ev.anchors[i])[d] + 0.5 * c0.header()[f].vector()[d];
      want = normalized(want);
      for (std::size_t d = 0; d < 32; ++d) CHECK(c1.header()[f].vector()[d] == doctest::Approx(want[d]).epsilon(1e-12));
    }
  }
  SUBCASE("not admitted") {
    Evaluation ev;
    ev.result.decision = Decision::rejected;
    CHECK(error_code_of([&] { b.remix(c0, ev, kT0); }) == ErrorCode::NotAdmitted);
    ev.result.decision = Decision::redundant;
    CHECK(error_code_of([&] { b.remix(c0, ev, kT0); }) == ErrorCode::NotAdmitted);
    CHECK(b.size() == 0);
  }
  SUBCASE("ancestors are capped at 50, nearest first") {
    Lineage l;
    for (int i = 0; i < 50; ++i) l.ancestors.push_back("cmb-" + digest128_hex("anc" + std::to_string(i)));
    l.parents = {l.ancestors.front()};
    const auto h = embed_header(texts("deep"), {});
    Cmb deep(derive_key(h, std::nullopt, l.parents.front(), "z"), "z", kT0, h, std::nullopt, l);
    auto c1 = b.remix(deep, b.evaluate(deep, kT0), kT0);
    CHECK(c1.lineage().ancestors.size() == 50);
    CHECK(c1.lineage().ancestors.front() == deep.key());
    CHECK(c1.lineage().ancestors[1] == l.ancestors[0]);
  }
}

TEST_CASE("receive") {
  auto a = MeshMem::load(config("a"));
  auto b = MeshMem::load(config("b"));
  const auto c0 = a.observe(texts("rx"), {0.2, 0.3}, std::nullopt, kT0).cmb;

  auto out = b.receive(c0, kT0 + 5);
  REQUIRE(out.kind == ReceiveKind::stored);
  REQUIRE(out.entry.has_value());
  CHECK(out.entry->source == "a+b");
  CHECK(out.entry->lifecycle == Lifecycle::remixed);
  CHECK(out.entry->svaf->decision == Decision::guarded);
  CHECK(out.entry->origin_parents.empty());
  CHECK(b.size() == 1);
  CHECK(b.lineage().contains(c0.key()));
  CHECK_FALSE(b.contains(c0.key()));
  const auto c1 = out.entry->cmb;

  SUBCASE("re-delivery is a no-op") {
    CHECK(b.receive(c0, kT0 + 6).kind == ReceiveKind::duplicate);
    CHECK(b.size() == 1);
  }
  SUBCASE("own descendant returning is an echo") {
    auto back = a.receive(c1, kT0 + 7);
    CHECK(back.kind == ReceiveKind::echo_dropped);
    CHECK(back.echo_of == c0.key());
    CHECK_FALSE(back.svaf.has_value());
    CHECK(a.size() == 1);
    CHECK(error_code_of([&] { a.fetch(c1.key()); }) == ErrorCode::UnknownKey);
  }
  SUBCASE("near-duplicate of a stored remix is redundant") {
    auto same = MeshMem::load(config("same"));
    const auto& s = same.observe(texts("rx"), {0.2, 0.3}, nlohmann::json{{"v", 2}}, kT0);
    auto rs = b.receive(s.cmb, kT0 + 9);
    CHECK(rs.kind == ReceiveKind::redundant_dropped);
    CHECK(rs.svaf->decision == Decision::redundant);
    for (double d : rs.svaf->field_drifts) CHECK(d < 0.10);
  }
  SUBCASE("unrelated content is rejected") {
    auto other = MeshMem::load(config("o"));
    FieldTexts t{{FieldName::focus, "quarterly tax filing"},
                 {FieldName::issue, "missing receipts from march"},
                 {FieldName::intent, "email the accountant"},
                 {FieldName::motivation, "avoid late penalties"},
                 {FieldName::commitment, "send everything by tuesday"},
                 {FieldName::perspective, "household admin"},
                 {FieldName::mood, "irritated"}};
    const auto& e = other.observe(t, {-0.4, 0.6}, std::nullopt, kT0);
    auto r = b.receive(e.cmb, kT0 + 10);
    CHECK(r.kind == ReceiveKind::rejected_dropped);
    CHECK(b.size() == 1);
  }
  SUBCASE("self-listed parent is malformed and leaves the store untouched") {
    const auto h = embed_header(texts("bad"), {});
    const auto k = derive_key(h, std::nullopt);
    Cmb bad(k, "z", kT0, h, std::nullopt, Lineage{{k}, {k}, {}});
    const auto before = b.serialized();
    CHECK(error_code_of([&] { b.receive(bad, kT0); }) == ErrorCode::MalformedCMB);
    CHECK(b.serialized() == before);
  }
  SUBCASE("dimension mismatch") {
    StoreConfig c = config("d");
    c.dim = 16;
    auto d = MeshMem::load(c);
    CHECK(error_code_of([&] { d.receive(c0, kT0); }) == ErrorCode::MalformedCMB);
  }
}

TEST_CASE("recall and fetch") {
  auto m = MeshMem::load(config("a"));
  CHECK(m.recall(5).empty());
  std::vector<CmbKey> keys;
  for (int i = 0; i < 5; ++i) keys.push_back(m.observe(texts("e" + std::to_string(i)), {}, std::nullopt, kT0 + i).key());
  auto r = m.recall(3);
  REQUIRE(r.size() == 3);
  CHECK(r[0].key() == keys[4]);
  CHECK(r[1].key() == keys[3]);
  CHECK(r[2].key() == keys[2]);
  auto q = m.recall(texts("e1"), 1);
  REQUIRE(q.size() == 1);
  CHECK(q[0].key() == keys[1]);
  CHECK(m.fetch(keys[0]).key() == keys[0]);
  CHECK(error_code_of([&] { m.fetch("cmb-" + std::string(32, 'f')); }) == ErrorCode::UnknownKey);
  CHECK(error_code_of([&] { m.recall(0); }) == ErrorCode::InvalidArgument);
  for (const auto& e : m.recall(100)) CHECK(e.cmb.created_by() == "a");
}

TEST_CASE("persistence") {
  testutil::TempDir dir;
  const auto path = dir / "a.log";
  std::string before;
  {
    auto a = MeshMem::load(config("a", path));
    auto b = MeshMem::load(config("b"));
    a.observe(texts("p1"), {0.1, 0.1}, nlohmann::json{{"k", "v"}}, kT0);
    auto c = b.observe(texts("p2"), {0.1, 0.1}, std::nullopt, kT0).cmb;
    REQUIRE(a.receive(c, kT0 + 1).kind == ReceiveKind::stored);
    before = a.serialized();
    CHECK(slurp(path) == before);
  }
  SUBCASE("load reproduces the store") {
    auto a = MeshMem::load(config("a", path));
    CHECK(a.serialized() == before);
    CHECK(a.invariant_violation().empty());
    CHECK(a.lineage().self_keys().size() == 2);
    a.save();
    CHECK(slurp(path) == before);
  }
  SUBCASE("fresh path is an empty store") {
    auto fresh = MeshMem::load(config("f", dir / "none.log"));
    CHECK(fresh.empty());
  }
  SUBCASE("truncated last record") {
    auto text = slurp(path);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << text.substr(0, text.size() - 20);
    CHECK(error_code_of([&] { MeshMem::load(config("a", path)); }) == ErrorCode::CorruptStore);
    CHECK(detail_of([&] { MeshMem::load(config("a", path)); }) == "record 1");
  }
  SUBCASE("missing trailing newline") {
    auto text = slurp(path);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << text.substr(0, text.size() - 1);
    CHECK(detail_of([&] { MeshMem::load(config("a", path)); }) == "record 1");
  }
  SUBCASE("foreign entry in the log") {
    auto other = MeshMem::load(config("z"));
    auto line = encode_entry(other.observe(texts("foreign"), {}, std::nullopt, kT0));
    std::ofstream(path, std::ios::binary | std::ios::app) << line << "\n";
    CHECK(error_code_of([&] { MeshMem::load(config("a", path)); }) == ErrorCode::CorruptStore);
  }
  SUBCASE("write failure leaves the store unchanged") {
    auto broken = MeshMem::load(config("w", dir.path()));  // a directory cannot be appended to
    CHECK(error_code_of([&] { broken.observe(texts("w"), {}, std::nullopt, kT0); }) == ErrorCode::StorageFailure);
    CHECK(broken.empty());
    CHECK(broken.lineage().size() == 0);
  }
}

TEST_CASE("prune and tiers") {
  testutil::TempDir dir;
  const auto path = dir / "t.log";
  auto c = config("a", path);
  c.ttl_ms = 10 * kHourMs;
  auto m = MeshMem::load(c);
  m.observe(texts("old"), {}, std::nullopt, kT0);
  m.observe(texts("new"), {}, std::nullopt, kT0 + 9 * kHourMs);
  CHECK(m.demote_tiers(kT0 + 2 * kHourMs) == 1);
  CHECK(m.entries()[0].tier == Tier::warm);
  CHECK(m.demote_tiers(kT0 + 30 * kHourMs) == 2);
  CHECK(m.entries()[0].tier == Tier::cold);
  CHECK(m.entries()[1].tier == Tier::warm);
  auto removed = m.prune(kT0 + 11 * kHourMs);
  CHECK(removed.size() == 1);
  CHECK(m.size() == 1);
  CHECK(slurp(path) == m.serialized());
  CHECK(MeshMem::load(c).serialized() == m.serialized());
}

TEST_CASE("config validation") {
  auto c = config("");
  CHECK(error_code_of([&] { MeshMem::load(c); }) == ErrorCode::InvalidConfig);
  c = config("a");
  c.beta = 1.5;
  CHECK(error_code_of([&] { MeshMem::load(c); }) == ErrorCode::InvalidConfig);
  c = config("a");
  c.warm_after_ms = c.cold_after_ms;
  CHECK(error_code_of([&] { MeshMem::load(c); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("write-time filtering and restart equivalence under random traffic") {
  std::mt19937_64 rng(17);
  testutil::TempDir dir;
  std::vector<std::string> ids = {"a", "b", "c"};
  std::map<std::string, MeshMem> nodes;
  for (const auto& id : ids) nodes.emplace(id, MeshMem::load(config(id, dir / (id + ".log"))));
  std::vector<Cmb> pool;
  const std::vector<std::string> words = {"deploy", "rollback", "latency", "schema", "budget", "review", "audit"};
  Timestamp now = kT0;
  for (int op = 0; op < 300; ++op) {
    now += 500;
    auto& node = nodes.at(ids[rng() % 3]);
    if (pool.empty() || rng() % 3 == 0) {
      FieldTexts t;
      for (auto f : kFields) t[f] = words[rng() % words.size()] + " " + words[rng() % words.size()];
      try {
        pool.push_back(node.observe(t, {}, std::nullopt, now).cmb);
      } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::ObserveConflict);
      }
    } else {
      auto r = node.receive(pool[rng() % pool.size()], now);
      if (r.entry) pool.push_back(r.entry->cmb);
    }
  }
  for (auto& [id, m] : nodes) {
    for (const auto& e : m.entries()) {
      CHECK(e.cmb.created_by() == id);
      if (e.lifecycle == Lifecycle::remixed) {
        REQUIRE(e.svaf.has_value());
        CHECK(is_admitted(e.svaf->decision));
      }
    }
    auto reloaded = MeshMem::load(config(id, dir / (id + ".log")));
    CHECK(reloaded.entries() == m.entries());
    CHECK(reloaded.recall(20) == m.recall(20));
    CHECK(reloaded.recall(texts("deploy"), 20) == m.recall(texts("deploy"), 20));
    CHECK(reloaded.lineage().self_keys() == m.lineage().self_keys());
  }
}
