#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <set>

#include "mmp/lineage.hpp"
#include "test_util.hpp"

using namespace mmp;
using testutil::error_code_of;

namespace {

const Cat7Header& shared_header() {
  static const Cat7Header h = embed_header(testutil::texts("lineage"), {0.0, 0.0});
  return h;
}

CmbKey k(const std::string& name) { return "cmb-" + digest128_hex(name); }

Cmb node(const std::string& name, const std::vector<std::string>& parents, const std::string& by = "peer",
         std::optional<std::vector<std::string>> carried = std::nullopt) {
  Lineage l;
  for (const auto& p : parents) l.parents.push_back(k(p));
  if (carried) {
    for (const auto& a : *carried) l.ancestors.push_back(k(a));
  } else {
    l.ancestors = l.parents;
  }
  return Cmb(k(name), by, 0, shared_header(), std::nullopt, l);
}

std::set<CmbKey> as_set(const std::vector<CmbKey>& v) { return {v.begin(), v.end()}; }

// Recursive DFS over the parent map, no depth bound.
std::set<CmbKey> dfs_closure(const std::map<CmbKey, std::vector<CmbKey>>& parents, const CmbKey& start) {
  std::set<CmbKey> seen;
  std::function<void(const CmbKey&)> visit = [&](const CmbKey& x) {
    auto it = parents.find(x);
    if (it == parents.end()) return;
    for (const auto& p : it->second) {
      if (seen.insert(p).second) visit(p);
    }
  };
  visit(start);
  return seen;
}

}  // namespace

TEST_CASE("insert") {
  LineageIndex idx("me");
  SUBCASE("root has no edges") {
    idx.insert(node("a", {}));
    CHECK(idx.parents_of(k("a")).empty());
    CHECK(idx.ancestors(k("a")).empty());
  }
  SUBCASE("self parent") {
    Lineage l{{k("s")}, {k("s")}, {}};
    Cmb c(k("s"), "peer", 0, shared_header(), std::nullopt, l);
    CHECK(error_code_of([&] { idx.insert(c); }) == ErrorCode::SelfParent);
    CHECK(idx.size() == 0);
  }
  SUBCASE("duplicate key") {
    idx.insert(node("a", {}));
    CHECK(error_code_of([&] { idx.insert(node("a", {})); }) == ErrorCode::DuplicateKey);
  }
  SUBCASE("own keys join K_self") {
    idx.insert(node("mine", {}, "me"));
    idx.insert(node("theirs", {}, "peer"));
    CHECK(idx.is_self(k("mine")));
    CHECK_FALSE(idx.is_self(k("theirs")));
  }
  SUBCASE("a frontier key cannot later close a cycle") {
    idx.insert(node("b", {"a"}));
    CHECK(error_code_of([&] { idx.insert(node("a", {"b"})); }) == ErrorCode::LineageCycle);
    CHECK(idx.consistent());
  }
  SUBCASE("carried ancestors that disagree are kept but flagged") {
    idx.insert(node("a", {}));
    idx.insert(node("b", {"a"}));
    auto r = idx.insert(node("c", {"b"}, "peer", std::vector<std::string>{"b"}));
    CHECK(r.ancestors_mismatch);
    CHECK(idx.flagged().contains(k("c")));
    auto ok = idx.insert(node("d", {"b"}, "peer", std::vector<std::string>{"b", "a"}));
    CHECK_FALSE(ok.ancestors_mismatch);
  }
}

TEST_CASE("ancestors") {
  LineageIndex idx("me");
  SUBCASE("chain") {
    idx.insert(node("a", {}));
    idx.insert(node("b", {"a"}));
    idx.insert(node("c", {"b"}));
    CHECK(idx.ancestors(k("c")) == std::vector<CmbKey>{k("b"), k("a")});
  }
  SUBCASE("diamond") {
    idx.insert(node("a", {}));
    idx.insert(node("b", {"a"}));
    idx.insert(node("c", {"a"}));
    idx.insert(node("d", {"b", "c"}));
    CHECK(as_set(idx.ancestors(k("d"))) == std::set<CmbKey>{k("a"), k("b"), k("c")});
    CHECK(idx.ancestors(k("d")).size() == 3);
  }
  SUBCASE("chain of 60 is cut at 50 levels, nearest first") {
    idx.insert(node("n0", {}));
    for (int i = 1; i < 60; ++i) idx.insert(node("n" + std::to_string(i), {"n" + std::to_string(i - 1)}));
    auto a = idx.ancestors(k("n59"));
    REQUIRE(a.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(a[i] == k("n" + std::to_string(58 - i)));
    CHECK(idx.ancestors(k("n59"), kUnboundedDepth).size() == 59);
    CHECK(idx.ancestors(k("n59"), 3).size() == 3);
  }
  SUBCASE("unknown parents are frontier keys") {
    idx.insert(node("x", {"ghost"}));
    CHECK(idx.ancestors(k("x")) == std::vector<CmbKey>{k("ghost")});
    CHECK_FALSE(idx.contains(k("ghost")));
  }
  SUBCASE("unknown key") { CHECK(error_code_of([&] { idx.ancestors(k("nope")); }) == ErrorCode::UnknownKey); }
}

TEST_CASE("closure matches brute-force DFS on random DAGs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 200);
    LineageIndex idx("me");
    std::map<CmbKey, std::vector<CmbKey>> parents;
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> ps;
      if (i > 0) {
        const int np = static_cast<int>(rng() % 4);
        for (int j = 0; j < np; ++j) {
          auto p = names[rng() % names.size()];
          if (std::find(ps.begin(), ps.end(), p) == ps.end()) ps.push_back(p);
        }
      }
      const std::string name = "t" + std::to_string(trial) + "-" + std::to_string(i);
      idx.insert(node(name, ps));
      for (const auto& p : ps) parents[k(name)].push_back(k(p));
      names.push_back(name);
    }
    for (const auto& name : names) {
      REQUIRE(as_set(idx.ancestors(k(name), kUnboundedDepth)) == dfs_closure(parents, k(name)));
    }
    CHECK(idx.consistent());
  }
}

TEST_CASE("echo detection") {
  LineageIndex idx("me");
  idx.insert(node("own", {}, "me"));
  SUBCASE("direct parent in K_self") { CHECK(idx.is_echo(node("in", {"own"}))); }
  SUBCASE("carried ancestor in K_self") {
    CHECK(idx.echo_source(node("in", {"mid"}, "peer", std::vector<std::string>{"mid", "own"})) == k("own"));
  }
  SUBCASE("disjoint and unknown") { CHECK_FALSE(idx.is_echo(node("in", {"stranger"}))); }
  SUBCASE("stripped carried list still caught through local edges") {
    idx.insert_foreign(k("mid"), {k("own")});
    CHECK(idx.is_echo(node("in", {"mid"}, "peer", std::vector<std::string>{"mid"})));
  }
  SUBCASE("no false positives") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 200; ++i) {
      auto c = node("probe" + std::to_string(i), {"p" + std::to_string(rng() % 50)});
      if (auto src = idx.echo_source(c)) CHECK(idx.is_self(*src));
    }
  }
}

TEST_CASE("prune") {
  LineageIndex idx("me");
  const Timestamp ttl = 1000;
  SUBCASE("all fresh") {
    idx.insert(node("a", {}), 100);
    idx.insert(node("b", {"a"}), 100);
    CHECK(idx.prune(500, ttl).empty());
  }
  SUBCASE("expired leaf removed") {
    idx.insert(node("a", {}), 100);
    CHECK(idx.prune(5000, ttl) == std::set<CmbKey>{k("a")});
    CHECK(idx.size() == 0);
  }
  SUBCASE("expired root with live descendant is retained") {
    idx.insert(node("a", {}), 0);
    idx.insert(node("b", {"a"}), 0);
    idx.insert(node("c", {"b"}), 5000);
    idx.insert(node("z", {}), 0);
    CHECK(idx.prune(5500, ttl) == std::set<CmbKey>{k("z")});
    CHECK(idx.contains(k("a")));
    CHECK(idx.contains(k("b")));
  }
  SUBCASE("protection reaches past the 50-level bound") {
    idx.insert(node("n0", {}), 0);
    for (int i = 1; i < 80; ++i) idx.insert(node("n" + std::to_string(i), {"n" + std::to_string(i - 1)}), i < 79 ? 0 : 9000);
    CHECK(idx.prune(9500, ttl).empty());
  }
  SUBCASE("bad ttl") { CHECK(error_code_of([&] { idx.prune(0, 0); }) == ErrorCode::InvalidArgument); }
  SUBCASE("retained keys keep their known ancestors") {
    std::mt19937_64 rng(31);
    std::vector<std::string> names;
    for (int i = 0; i < 150; ++i) {
      std::vector<std::string> ps;
      if (!names.empty() && rng() % 3) ps.push_back(names[rng() % names.size()]);
      names.push_back("r" + std::to_string(i));
      idx.insert(node(names.back(), ps), static_cast<Timestamp>(rng() % 4000));
    }
    auto removed = idx.prune(4000, ttl);
    CHECK_FALSE(removed.empty());
    for (const auto& key : idx.keys()) {
      for (const auto& a : idx.ancestors(key, kUnboundedDepth)) CHECK_FALSE(removed.contains(a));
    }
    CHECK(idx.consistent());
  }
}
