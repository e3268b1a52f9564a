#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "umlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using umlab::Stream;

TEST_CASE("philox4x32-10 known answers") {
    using A4 = std::array<std::uint32_t, 4>;
    CHECK(umlab::philox4x32_10({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(umlab::philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(umlab::philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("same seed gives the same sequence") {
    Stream a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);
}

TEST_CASE("substreams depend on ids, not on draw history") {
    Stream root(7);
    const Stream s1 = root.substream(3, 4);
    root.next_u64();
    const Stream s2 = root.substream(3, 4);
    CHECK(s1.key() == s2.key());
    CHECK(root.substream(3, 4).key() != root.substream(4, 3).key());
    CHECK(root.substream(3).key() != root.substream(3, 0).key());
    CHECK(Stream(1).substream(0).key() != Stream(2).substream(0).key());
}

TEST_CASE("uniform and normal moments") {
    Stream s(11);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    double lo = 1, hi = 0;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        su += u;
        const double z = s.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("index is in range and roughly uniform") {
    Stream s(5);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto k = s.index(7);
        REQUIRE(k < 7);
        ++counts[k];
    }
    double chi2 = 0;
    for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
    CHECK(chi2 < 22.5);  // 6 dof, p ~ 0.001
}

TEST_CASE("choose returns distinct values and shuffle permutes") {
    Stream s(9);
    for (int trial = 0; trial < 50; ++trial) {
        const auto v = s.choose(20, 8);
        CHECK(v.size() == 8);
        CHECK(std::set<int>(v.begin(), v.end()).size() == 8);
        for (int x : v) CHECK((x >= 0 && x < 20));
    }
    CHECK(s.choose(5, 5).size() == 5);
    std::vector<int> items(30);
    std::iota(items.begin(), items.end(), 0);
    auto shuffled = items;
    s.shuffle(std::span<int>(shuffled));
    CHECK(shuffled != items);
    std::sort(shuffled.begin(), shuffled.end());
    CHECK(shuffled == items);
}
