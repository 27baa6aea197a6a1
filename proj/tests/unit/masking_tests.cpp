#include <doctest.h>

#include <algorithm>
#include <vector>

#include "diffrec/masking.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/vocab.hpp"

using namespace diffrec;

namespace {
const std::vector<int32_t> kTokens{10, 11, 12, 13, 14, 15};
const int32_t kMask = 99;
}  // namespace

TEST_CASE("ratio extremes mask nothing or everything") {
    Rng rng = make_rng(61);
    const std::vector<int> eligible{1, 3, 4};
    CHECK(draw_mask_positions(eligible, 0.0, rng).empty());
    CHECK(draw_mask_positions(eligible, 1.0, rng) == eligible);
    CHECK_THROWS_AS(draw_mask_positions(eligible, -0.1, rng), std::invalid_argument);
    CHECK_THROWS_AS(draw_mask_positions(eligible, 1.1, rng), std::invalid_argument);
}

TEST_CASE("apply_mask replaces exactly the chosen positions") {
    MaskSample s = apply_mask(kTokens, {1, 4}, kMask, 0.4);
    CHECK(s.r == 0.4);
    CHECK(s.original == kTokens);
    CHECK(s.masked == std::vector<int32_t>{10, kMask, 12, 13, kMask, 15});
    CHECK(s.masked_positions == std::vector<int>{1, 4});
    CHECK_THROWS_AS(apply_mask(kTokens, {6}, kMask, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(apply_mask(kTokens, {-1}, kMask, 0.5), std::invalid_argument);
}

TEST_CASE("sampled masks hit only eligible positions, never come back empty") {
    Rng rng = make_rng(62);
    const std::vector<int> eligible{0, 2, 5};
    for (int trial = 0; trial < 200; ++trial) {
        MaskSample s = sample_mask(kTokens, eligible, kMask, rng);
        CHECK(s.r > 0.0);
        CHECK(s.r < 1.0);
        REQUIRE_FALSE(s.masked_positions.empty());
        CHECK(std::is_sorted(s.masked_positions.begin(), s.masked_positions.end()));
        for (int pos : s.masked_positions) {
            CHECK(std::count(eligible.begin(), eligible.end(), pos) == 1);
            CHECK(s.masked[static_cast<size_t>(pos)] == kMask);
        }
        for (size_t i = 0; i < kTokens.size(); ++i) {
            const bool chosen = std::count(s.masked_positions.begin(), s.masked_positions.end(),
                                           static_cast<int>(i)) > 0;
            CHECK(s.masked[i] == (chosen ? kMask : kTokens[i]));
        }
    }
    CHECK_THROWS_AS(sample_mask(kTokens, {}, kMask, rng), std::invalid_argument);
}

TEST_CASE("sampling is reproducible for equal rng state") {
    Rng a = make_rng(63), b = make_rng(63);
    const std::vector<int> eligible{0, 1, 2, 3, 4, 5};
    for (int i = 0; i < 50; ++i) {
        MaskSample sa = sample_mask(kTokens, eligible, kMask, a);
        MaskSample sb = sample_mask(kTokens, eligible, kMask, b);
        CHECK(sa.r == sb.r);
        CHECK(sa.masked_positions == sb.masked_positions);
    }
}

TEST_CASE("fixed-ratio sampling keeps r pinned and masks at the right rate") {
    Rng rng = make_rng(64);
    std::vector<int32_t> tokens(100, 7);
    std::vector<int> eligible(100);
    for (int i = 0; i < 100; ++i) eligible[static_cast<size_t>(i)] = i;

    const double r = 0.3;
    int64_t masked = 0, draws = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        MaskSample s = sample_mask_with_ratio(tokens, eligible, kMask, r, rng);
        CHECK(s.r == r);
        REQUIRE_FALSE(s.masked_positions.empty());
        masked += static_cast<int64_t>(s.masked_positions.size());
        draws += 100;
    }
    const double fraction = static_cast<double>(masked) / static_cast<double>(draws);
    CHECK(fraction > 0.29);
    CHECK(fraction < 0.31);
    CHECK_THROWS_AS(sample_mask_with_ratio(tokens, eligible, kMask, 0.0, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(sample_mask_with_ratio(tokens, eligible, kMask, 1.2, rng),
                    std::invalid_argument);
}
