#include <doctest.h>

#include <algorithm>
#include <bit>

#include "mpu/errors.hpp"
#include "mpu/symptom_match.hpp"
#include "testutil.hpp"

using namespace mpu;
using namespace mpu::match;

namespace {

SymptomSchema schema2() { return SymptomSchema{{4, 4}}; }

SymptomVector vec(const SymptomSchema& s, std::vector<std::uint64_t> dims) {
    return SymptomVector{s.id(), std::move(dims)};
}

// independent per-dimension popcount oracle
std::uint64_t oracle_distance(const SymptomVector& x, const SymptomVector& y,
                              const std::vector<std::uint32_t>& w) {
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < x.dims.size(); ++d) {
        std::uint64_t bits = x.dims[d] ^ y.dims[d];
        int pop = 0;
        while (bits) {
            pop += static_cast<int>(bits & 1);
            bits >>= 1;
        }
        total += (w.empty() ? 1 : w[d]) * static_cast<std::uint64_t>(pop);
    }
    return total;
}

SymptomVector random_vec(const SymptomSchema& s, testutil::SplitMix64& rng) {
    SymptomVector v;
    v.schema_id = s.id();
    for (std::uint8_t w : s.widths)
        v.dims.push_back(rng.next() & ((w >= 64) ? ~0ull : ((1ull << w) - 1)));
    return v;
}

}  // namespace

TEST_SUITE_BEGIN("match");

TEST_CASE("distance examples against the popcount oracle") {
    SymptomSchema s = schema2();
    SymptomVector x = vec(s, {0b1010, 0b0011});
    SymptomVector y = vec(s, {0b1110, 0b0011});

    CHECK(distance(x, x) == 0);
    CHECK(oracle_distance(x, y, {1, 1}) == 1);
    CHECK(distance(x, y, {1, 1}) == 1);
    CHECK(oracle_distance(x, y, {3, 1}) == 3);
    CHECK(distance(x, y, {3, 1}) == 3);
    CHECK(distance(x, y) == distance(y, x));
}

TEST_CASE("schema mismatch is rejected") {
    SymptomSchema a{{4, 4}}, b{{8}};
    SymptomVector x = vec(a, {1, 2});
    SymptomVector y{b.id(), {1}};
    CHECK_THROWS_AS(distance(x, y), MpuError);
    CHECK_THROWS_AS(distance(x, x, {1, 2, 3}), MpuError);
}

TEST_CASE("nearest_k basics") {
    SymptomSchema s = schema2();
    SignatureBank bank;
    bank.add({1, vec(s, {0b0000, 0b0000}), "a"});
    bank.add({2, vec(s, {0b1111, 0b0000}), "b"});
    bank.add({3, vec(s, {0b1111, 0b1111}), "c"});

    SUBCASE("exact member comes back at distance zero") {
        auto r = nearest_k(bank, vec(s, {0b1111, 0b0000}), 1);
        REQUIRE(r.size() == 1);
        CHECK(r[0].record_id == 2);
        CHECK(r[0].distance == 0);
    }
    SUBCASE("k >= bank size returns the whole bank sorted") {
        auto r = nearest_k(bank, vec(s, {0b0000, 0b0000}), 99);
        REQUIRE(r.size() == 3);
        CHECK(r[0].record_id == 1);
        CHECK(r[1].record_id == 2);
        CHECK(r[2].record_id == 3);
    }
    SUBCASE("ties break by ascending record id") {
        SignatureBank tied;
        tied.add({9, vec(s, {0b0001, 0}), "x"});
        tied.add({4, vec(s, {0b0010, 0}), "y"});
        auto r = nearest_k(tied, vec(s, {0, 0}), 2);
        REQUIRE(r.size() == 2);
        CHECK(r[0].record_id == 4);
        CHECK(r[1].record_id == 9);
    }
    SUBCASE("empty bank") {
        SignatureBank empty;
        CHECK_THROWS_AS(nearest_k(empty, vec(s, {0, 0}), 1), MpuError);
    }
    SUBCASE("duplicate record ids rejected") {
        SignatureBank dup;
        dup.add({1, vec(s, {0, 0}), "x"});
        CHECK_THROWS_AS(dup.add({1, vec(s, {1, 0}), "y"}), MpuError);
    }
}

TEST_CASE("nearest_k equals exhaustive scan and sort") {
    SymptomSchema s{{8, 8, 8, 8}};
    testutil::SplitMix64 rng(555);
    SignatureBank bank;
    for (std::uint32_t i = 0; i < 512; ++i)
        bank.add({i + 1, random_vec(s, rng), "r" + std::to_string(i)});
    bank.weights = {1, 2, 1, 3};

    for (int q = 0; q < 20; ++q) {
        SymptomVector query = random_vec(s, rng);
        auto got = nearest_k(bank, query, 5);

        std::vector<Neighbor> oracle;
        for (const auto& rec : bank.entries)
            oracle.push_back({rec.record_id,
                              oracle_distance(rec.vector, query, bank.weights)});
        std::sort(oracle.begin(), oracle.end(),
                  [](const Neighbor& a, const Neighbor& b) {
                      return a.distance != b.distance ? a.distance < b.distance
                                                      : a.record_id < b.record_id;
                  });
        oracle.resize(5);
        CHECK(got == oracle);
    }
}

TEST_CASE("delta_profile lists differing bit positions per dimension") {
    SymptomSchema s = schema2();
    SymptomVector x = vec(s, {0b1010, 0b0011});

    auto none = delta_profile(x, x);
    for (const auto& d : none) CHECK(d.empty());

    auto one = delta_profile(vec(s, {0b1010, 0}), vec(s, {0b1110, 0}));
    CHECK(one[0] == std::vector<int>{2});
    CHECK(one[1].empty());

    auto both = delta_profile(vec(s, {0b00, 0}), vec(s, {0b11, 0}));
    CHECK(both[0] == std::vector<int>{0, 1});
}

TEST_CASE("delta_profile total equals unit-weight distance") {
    SymptomSchema s{{8, 16, 4}};
    testutil::SplitMix64 rng(616);
    for (int i = 0; i < 500; ++i) {
        SymptomVector x = random_vec(s, rng), y = random_vec(s, rng);
        auto profile = delta_profile(x, y);
        std::size_t total = 0;
        for (const auto& d : profile) total += d.size();
        CHECK(total == distance(x, y));
    }
}

TEST_CASE("metric axioms with unit weights") {
    SymptomSchema s{{8, 8}};
    testutil::SplitMix64 rng(99);
    for (int i = 0; i < 1000; ++i) {
        SymptomVector a = random_vec(s, rng), b = random_vec(s, rng),
                      c = random_vec(s, rng);
        CHECK(distance(a, b) == distance(b, a));
        CHECK((distance(a, b) == 0) == (a.dims == b.dims));
        CHECK(distance(a, c) <= distance(a, b) + distance(b, c));
    }
}

TEST_CASE("hex rendering round-trips under the schema") {
    SymptomSchema s{{8, 8, 8, 8}};
    auto v = parse_hex(s, "1a:2b:3c:4d");
    REQUIRE(v.has_value());
    CHECK(v->dims == std::vector<std::uint64_t>{0x1a, 0x2b, 0x3c, 0x4d});
    CHECK(to_hex(*v) == "1a:2b:3c:4d");

    CHECK_FALSE(parse_hex(s, "1a:2b:3c").has_value());     // missing dim
    CHECK_FALSE(parse_hex(s, "1a:2b:3c:4d:5e").has_value());
    CHECK_FALSE(parse_hex(SymptomSchema{{4}}, "ff").has_value());  // too wide
    CHECK_FALSE(parse_hex(s, "xx:2b:3c:4d").has_value());
}

TEST_SUITE_END();
