#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "diffrec/rng.hpp"

namespace diffrec {

struct MaskSample {
    double r = 0.0;                      // mask ratio used
    std::vector<int> masked_positions;   // ascending subset of the eligible positions
    std::vector<int32_t> original;       // tokens before masking
    std::vector<int32_t> masked;         // tokens with masked positions replaced
};

// Independent Bernoulli(r) over the eligible positions; may select none.
inline std::vector<int> draw_mask_positions(const std::vector<int>& eligible, double r, Rng& rng) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("mask ratio must be in [0, 1]");
    std::vector<int> out;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int pos : eligible) {
        if (unit(rng) < r) out.push_back(pos);
    }
    return out;
}

inline MaskSample apply_mask(const std::vector<int32_t>& tokens, std::vector<int> positions,
                             int32_t mask_token, double r) {
    MaskSample s;
    s.r = r;
    s.original = tokens;
    s.masked = tokens;
    s.masked_positions = std::move(positions);
    for (int pos : s.masked_positions) {
        if (pos < 0 || pos >= static_cast<int>(tokens.size())) {
            throw std::invalid_argument("mask position out of range");
        }
        s.masked[static_cast<size_t>(pos)] = mask_token;
    }
    return s;
}

// Draws r ~ U(0, 1), masks each eligible position independently with
// probability r, and redraws the whole sample while nothing got masked.
inline MaskSample sample_mask(const std::vector<int32_t>& tokens, const std::vector<int>& eligible,
                              int32_t mask_token, Rng& rng) {
    if (eligible.empty()) throw std::invalid_argument("sample_mask: no eligible positions");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (;;) {
        const double r = unit(rng);
        std::vector<int> positions = draw_mask_positions(eligible, r, rng);
        if (!positions.empty()) return apply_mask(tokens, std::move(positions), mask_token, r);
    }
}

// Fixed-ratio variant: keeps r pinned and redraws only the Bernoulli outcomes
// until at least one position is masked.
inline MaskSample sample_mask_with_ratio(const std::vector<int32_t>& tokens,
                                         const std::vector<int>& eligible, int32_t mask_token,
                                         double r, Rng& rng) {
    if (eligible.empty()) throw std::invalid_argument("sample_mask: no eligible positions");
    if (r <= 0.0 || r > 1.0) throw std::invalid_argument("sample_mask: fixed ratio must be in (0, 1]");
    for (;;) {
        std::vector<int> positions = draw_mask_positions(eligible, r, rng);
        if (!positions.empty()) return apply_mask(tokens, std::move(positions), mask_token, r);
    }
}

}  // namespace diffrec
