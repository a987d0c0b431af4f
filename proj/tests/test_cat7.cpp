#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <regex>
#include <set>

#include "mmp/cat7.hpp"
#include "test_util.hpp"

using namespace mmp;
using testutil::error_code_of;

namespace {

// Written from the embedder description, not from the library source.
Vector oracle_embed(const std::string& text, std::size_t d) {
  std::string s = " ";
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  s += " ";
  Vector acc(d, 0.0);
  for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t j = i; j < i + 3; ++j) {
      h ^= static_cast<unsigned char>(s[j]);
      h *= 1099511628211ULL;
    }
    const bool negative = (h >> 63) != 0;
    acc[(h << 1 >> 1) % d] += negative ? -1.0 : 1.0;
  }
  double n = 0;
  for (double x : acc) n += x * x;
  for (auto& x : acc) x /= std::sqrt(n);
  return acc;
}

const std::regex kKeyRe("^cmb-[0-9a-f]{32}$");

}  // namespace

TEST_CASE("field names are the seven CAT7 fields in canonical order") {
  const std::vector<std::string> expected = {"focus", "issue", "intent", "motivation", "commitment", "perspective", "mood"};
  REQUIRE(kFields.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(field_name(kFields[i]) == expected[i]);
    CHECK(parse_field_name(expected[i]) == kFields[i]);
    CHECK(index_of(kFields[i]) == i);
  }
  CHECK_FALSE(parse_field_name("topic").has_value());
}

TEST_CASE("embed_text") {
  SUBCASE("deterministic and unit length") {
    auto a = embed_text("focused", 32);
    auto b = embed_text("focused", 32);
    CHECK(a == b);
    CHECK(cosine(a, b) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(norm(embed_text("cross-platform-cat7-emission-verification", 32)) - 1.0) <= 1e-9);
  }
  SUBCASE("matches an independent trigram hashing oracle") {
    for (std::string t : {"focused", "tired", "Mixed Case Text", "a", "cross-platform-cat7-emission-verification",
                          "post-rollout-verification-required-before-closing-ship-cycle"}) {
      for (std::size_t d : {2u, 7u, 32u, 64u}) {
        auto got = embed_text(t, d);
        auto want = oracle_embed(t, d);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < d; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-15));
      }
    }
  }
  SUBCASE("golden cosine between focused and tired") {
    // Frozen from the first run of the embedder.
    CHECK(cosine(embed_text("focused", 32), embed_text("tired", 32)) == doctest::Approx(0.19245008972987526).epsilon(1e-15));
  }
  SUBCASE("case-insensitive") { CHECK(embed_text("FOCUSED", 32) == embed_text("focused", 32)); }
  SUBCASE("errors") {
    CHECK(error_code_of([] { embed_text("", 32); }) == ErrorCode::EmptyText);
    CHECK(error_code_of([] { embed_text("x", 1); }) == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("vector helpers") {
  CHECK(cosine(testutil::basis(0), testutil::basis(1)) == 0.0);
  CHECK(error_code_of([] { cosine(Vector(32, 0.0), testutil::basis(0)); }) == ErrorCode::ZeroVector);
  CHECK(error_code_of([] { cosine(testutil::basis(0, 3), testutil::basis(0)); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("FieldValue invariants") {
  auto v = embed_text("x", 32);
  CHECK_NOTHROW(FieldValue(FieldName::focus, "x", v));
  CHECK(error_code_of([&] { FieldValue(FieldName::focus, "", v); }) == ErrorCode::EmptyText);
  CHECK(error_code_of([&] { FieldValue(FieldName::focus, "x", Vector(32, 0.5)); }) == ErrorCode::InvalidHeader);
  CHECK(error_code_of([&] { FieldValue(FieldName::focus, "x", v, Mood{0.1, 0.1}); }) == ErrorCode::InvalidHeader);
  CHECK(error_code_of([&] { FieldValue(FieldName::mood, "x", v); }) == ErrorCode::InvalidHeader);
  CHECK(error_code_of([&] { FieldValue(FieldName::mood, "x", v, Mood{1.5, 0.0}); }) == ErrorCode::MoodOutOfRange);
}

TEST_CASE("Cat7Header requires all seven fields") {
  auto h = embed_header(testutil::texts("a"), {0.2, 0.3});
  auto fields = h.fields();
  fields.erase(fields.begin() + 2);
  CHECK(error_code_of([&] { Cat7Header{fields}; }) == ErrorCode::InvalidHeader);
  auto dup = h.fields();
  dup[2] = dup[1];
  CHECK(error_code_of([&] { Cat7Header{dup}; }) == ErrorCode::InvalidHeader);
}

TEST_CASE("canonical_bytes") {
  auto h = embed_header(testutil::texts("a"), {0.2, 0.3});
  SUBCASE("deterministic and independent of insertion order") {
    auto shuffled = h.fields();
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(canonical_bytes(h, std::nullopt) == canonical_bytes(Cat7Header(shuffled), std::nullopt));
  }
  SUBCASE("valence change alters the bytes") {
    auto h3 = embed_header(testutil::texts("a"), {0.3, 0.3});
    CHECK(canonical_bytes(h, std::nullopt) != canonical_bytes(h3, std::nullopt));
  }
  SUBCASE("absent body differs from empty body") {
    auto a = canonical_bytes(h, std::nullopt);
    auto b = canonical_bytes(h, nlohmann::json::object());
    CHECK(a != b);
    CHECK(b.size() > a.size());
    CHECK(b.substr(0, a.size()) == a);
  }
  SUBCASE("layout") {
    auto bytes = canonical_bytes(h, std::nullopt);
    CHECK(bytes.rfind("focus\x1F" "a focus\x1F", 0) == 0);
    CHECK(std::count(bytes.begin(), bytes.end(), '\x1E') == 7);
    CHECK(bytes.find("mood\x1F" "a mood\x1F" "0.2\x1F" "0.3\x1F") != std::string::npos);
  }
  SUBCASE("body keys are sorted") {
    auto b1 = nlohmann::json::parse(R"({"b":1,"a":{"y":2,"x":3}})");
    auto b2 = nlohmann::json::parse(R"({"a":{"x":3,"y":2},"b":1})");
    CHECK(canonical_bytes(h, b1) == canonical_bytes(h, b2));
  }
}

TEST_CASE("digest128 is truncated SHA-256") {
  // FIPS 180-2 test vector for "abc".
  CHECK(digest128_hex("abc") == "ba7816bf8f01cfea414140de5dae2223");
  CHECK(digest128_hex("") == "e3b0c44298fc1c149afbf4c8996fb924");
}

TEST_CASE("derive_key") {
  auto h = embed_header(testutil::texts("k"), {0.0, 0.0});
  CHECK(derive_key(h, std::nullopt) == derive_key(h, std::nullopt));
  CHECK(derive_key(h, std::nullopt) == "cmb-" + digest128_hex(canonical_bytes(h, std::nullopt)));
  const std::string parent = "cmb-" + std::string(32, 'a');
  auto remix = derive_key(h, std::nullopt, parent, "node-b");
  CHECK(remix != derive_key(h, std::nullopt));
  CHECK(remix == "cmb-" + digest128_hex(canonical_bytes(h, std::nullopt) + "\x1E" + parent + "\x1E" + "node-b"));
  CHECK(std::regex_match(remix, kKeyRe));
  CHECK(error_code_of([&] { derive_key(h, std::nullopt, parent, std::nullopt); }) == ErrorCode::InvalidKeyRequest);
  CHECK(error_code_of([&] { derive_key(h, std::nullopt, std::nullopt, "b"); }) == ErrorCode::InvalidKeyRequest);
}

TEST_CASE("derive_key is pure and collision-free at desk scale") {
  std::mt19937_64 rng(42);
  std::set<std::string> keys;
  for (int i = 0; i < 10'000; ++i) {
    PerField<Vector> vs;
    for (auto& v : vs) v = testutil::random_unit(rng);
    auto h = testutil::header_of(vs, std::to_string(i));
    Body body;
    if (i % 3 == 0) body = nlohmann::json{{"n", i}};
    std::optional<CmbKey> parent;
    std::optional<NodeId> receiver;
    if (i % 2 == 0) {
      parent = "cmb-" + digest128_hex(std::to_string(i));
      receiver = "node-" + std::to_string(i % 5);
    }
    auto k1 = derive_key(h, body, parent, receiver);
    auto k2 = derive_key(h, body, parent, receiver);
    REQUIRE(k1 == k2);
    REQUIRE(std::regex_match(k1, kKeyRe));
    keys.insert(k1);
  }
  CHECK(keys.size() == 10'000);
}

TEST_CASE("100,000 distinct headers give 100,000 distinct keys") {
  // Vectors are shared per field so the test stays fast; texts differ.
  std::set<std::string> keys;
  FieldTexts t = testutil::texts("base");
  auto base = embed_header(t, {0.0, 0.0});
  for (int i = 0; i < 100'000; ++i) {
    auto fields = base.fields();
    fields[0] = FieldValue(FieldName::focus, "focus " + std::to_string(i), fields[0].vector());
    keys.insert(derive_key(Cat7Header(std::move(fields)), std::nullopt));
  }
  CHECK(keys.size() == 100'000);
}

TEST_CASE("make_observation") {
  auto c = make_observation("node-a", testutil::texts("o"), {0.2, 0.3}, std::nullopt, testutil::kT0);
  CHECK(c.lineage().parents.empty());
  CHECK(c.lineage().ancestors.empty());
  CHECK_FALSE(c.lineage().method.has_value());
  CHECK(c.created_at() == testutil::kT0);
  CHECK(c.created_by() == "node-a");
  CHECK(c.key() == derive_key(c.header(), c.body()));
  CHECK(c.header()[FieldName::mood].mood() == Mood{0.2, 0.3});
  CHECK(c == make_observation("node-a", testutil::texts("o"), {0.2, 0.3}, std::nullopt, testutil::kT0));
  CHECK(error_code_of([] { make_observation("n", testutil::texts("o"), {1.5, 0.0}, std::nullopt, 0); }) ==
        ErrorCode::MoodOutOfRange);
  auto missing = testutil::texts("o");
  missing.erase(FieldName::intent);
  CHECK(error_code_of([&] { make_observation("n", missing, {}, std::nullopt, 0); }) == ErrorCode::EmptyText);
}

TEST_CASE("Cmb validates its invariants") {
  auto h = embed_header(testutil::texts("v"), {0.0, 0.0});
  auto key = derive_key(h, std::nullopt);
  const std::string p = "cmb-" + std::string(32, 'b');
  CHECK(error_code_of([&] { Cmb("cmb-XYZ", "n", 0, h, std::nullopt, {}); }) == ErrorCode::MalformedCMB);
  CHECK(error_code_of([&] { Cmb(key, "n", 0, h, nlohmann::json::array(), {}); }) == ErrorCode::MalformedCMB);
  CHECK(error_code_of([&] { Cmb(key, "n", 0, h, std::nullopt, Lineage{{p}, {}, {}}); }) == ErrorCode::MalformedCMB);
  std::vector<CmbKey> many;
  for (int i = 0; i < 51; ++i) many.push_back("cmb-" + digest128_hex(std::to_string(i)));
  CHECK(error_code_of([&] { Cmb(key, "n", 0, h, std::nullopt, Lineage{{}, many, {}}); }) == ErrorCode::MalformedCMB);
  many.pop_back();
  CHECK_NOTHROW(Cmb(key, "n", 0, h, std::nullopt, Lineage{{many[0]}, many, {}}));
}
