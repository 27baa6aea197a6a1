#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace diffrec {

// An item's generative identity: one code index per head.
using SemanticID = std::vector<int32_t>;

// Token id layout: head-m code c maps to m*K + c; the two specials sit after
// all code blocks.
struct VocabLayout {
    int M = 0;
    int K = 0;

    VocabLayout() = default;
    VocabLayout(int m, int k) : M(m), K(k) {
        if (m <= 0 || k <= 0) throw std::invalid_argument("vocab layout: M and K must be positive");
    }

    int32_t mask_token() const { return M * K; }
    int32_t pad_token() const { return M * K + 1; }
    int32_t vocab_size() const { return M * K + 2; }
    bool is_code(int32_t tok) const { return tok >= 0 && tok < M * K; }
    int32_t token_of(int head, int32_t code) const {
        if (head < 0 || head >= M || code < 0 || code >= K) {
            throw std::out_of_range("vocab layout: code out of range");
        }
        return head * K + code;
    }
    int head_of(int32_t tok) const {
        if (!is_code(tok)) throw std::out_of_range("vocab layout: not a code token");
        return tok / K;
    }
    int32_t code_of(int32_t tok) const {
        if (!is_code(tok)) throw std::out_of_range("vocab layout: not a code token");
        return tok % K;
    }
};

// Position layout of a model input: n_max history items of M tokens each,
// then the next-item block of M tokens.
struct SequenceLayout {
    int n_max = 0;
    int M = 0;

    SequenceLayout() = default;
    SequenceLayout(int n, int m) : n_max(n), M(m) {
        if (n <= 0 || m <= 0) throw std::invalid_argument("sequence layout: bad sizes");
    }

    int length() const { return n_max * M + M; }
    int history_len() const { return n_max * M; }
    int block_begin() const { return n_max * M; }
    int item_of(int pos) const { return pos / M; }
    int offset_of(int pos) const { return pos % M; }
};

}  // namespace diffrec
