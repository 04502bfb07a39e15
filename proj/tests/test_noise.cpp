#include "damt/noise.hpp"

#include <map>

#include "doctest.h"

using namespace damt;

namespace {
constexpr int kMask = 4;
}

TEST_CASE("zero probabilities with window 1 is the identity") {
    NoiseConfig cfg{0.0, 0.0, 1};
    Rng rng(5);
    std::vector<int> ids = {10, 11, 12, 13, 14};
    CHECK(corrupt(cfg, ids, rng, kMask) == ids);
}

TEST_CASE("p_drop = 1 keeps exactly one token") {
    NoiseConfig cfg{1.0, 0.0, 1};
    std::vector<int> ids = {7, 8, 9, 10};
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        auto out = corrupt(cfg, ids, rng, kMask);
        REQUIRE(out.size() == 1);
        CHECK(std::count(ids.begin(), ids.end(), out[0]) > 0);
    }
}

TEST_CASE("empty input returns empty") {
    NoiseConfig cfg;
    Rng rng(1);
    CHECK(corrupt(cfg, {}, rng, kMask).empty());
}

TEST_CASE("seeded reference output is pinned") {
    NoiseConfig cfg;  // defaults: 0.1 / 0.1 / window 3
    Rng rng(12345);
    std::vector<int> ids = {10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
    auto out = corrupt(cfg, ids, rng, kMask);
    // recorded from the seeded reference execution of this configuration:
    // one token dropped, three blanked, two local swaps
    CHECK(out == std::vector<int>{4, 4, 12, 13, 15, 14, 19, 17, 4});
    Rng rng2(12345);
    CHECK(corrupt(cfg, ids, rng2, kMask) == out);
}

TEST_CASE("empirical drop and blank rates sit near 0.1") {
    NoiseConfig cfg;  // defaults, but isolate the two rates
    Rng rng(99);
    const size_t n = 20000;
    std::vector<int> ids(n);
    for (size_t i = 0; i < n; ++i) ids[i] = int(10 + i % 50);

    NoiseConfig drop_only{0.1, 0.0, 1};
    auto dropped = corrupt(drop_only, ids, rng, kMask);
    double drop_rate = 1.0 - double(dropped.size()) / double(n);
    CHECK(drop_rate > 0.08);
    CHECK(drop_rate < 0.12);

    NoiseConfig blank_only{0.0, 0.1, 1};
    auto blanked = corrupt(blank_only, ids, rng, kMask);
    double blank_rate =
        double(std::count(blanked.begin(), blanked.end(), kMask)) / double(n);
    CHECK(blank_rate > 0.08);
    CHECK(blank_rate < 0.12);
}

TEST_CASE("every displacement stays below the window") {
    NoiseConfig cfg{0.0, 0.0, 3};
    Rng rng(7);
    std::vector<int> ids(200);
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = int(i) + 100;  // unique labels
    for (int trial = 0; trial < 50; ++trial) {
        auto out = corrupt(cfg, ids, rng, kMask);
        REQUIRE(out.size() == ids.size());
        for (size_t pos = 0; pos < out.size(); ++pos) {
            size_t orig = size_t(out[pos] - 100);
            size_t disp = pos > orig ? pos - orig : orig - pos;
            CHECK(disp < cfg.window);
        }
    }
}

TEST_CASE("non-mask outputs are a sub-multiset of the input") {
    NoiseConfig cfg;  // defaults
    Rng rng(31);
    std::vector<int> ids;
    for (int i = 0; i < 300; ++i) ids.push_back(10 + i % 7);
    for (int trial = 0; trial < 20; ++trial) {
        auto out = corrupt(cfg, ids, rng, kMask);
        std::map<int, int> avail;
        for (int id : ids) ++avail[id];
        for (int id : out) {
            if (id == kMask) continue;
            CHECK(--avail[id] >= 0);
        }
    }
}

TEST_CASE("invalid configs are rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(corrupt(NoiseConfig{-0.1, 0.1, 3}, {1, 2}, rng, kMask), ConfigError);
    CHECK_THROWS_AS(corrupt(NoiseConfig{0.1, 1.5, 3}, {1, 2}, rng, kMask), ConfigError);
    CHECK_THROWS_AS(corrupt(NoiseConfig{0.1, 0.1, 0}, {1, 2}, rng, kMask), ConfigError);
}
