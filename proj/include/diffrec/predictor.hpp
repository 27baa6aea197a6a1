#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffrec/attention.hpp"
#include "diffrec/nn.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/tensor.hpp"
#include "diffrec/vocab.hpp"

namespace diffrec {

struct PredictorConfig {
    int layers = 4;
    int d_model = 256;
    int heads = 8;
    int d_ff = 0;  // 0 -> 4 * d_model
    AttentionPattern pattern = AttentionPattern::bidirectional;
    double dropout = 0.0;
    int M = 4;
    int K = 256;
    int n_max = 20;
    uint64_t seed = 42;

    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
};

// Model input: token sequence plus the pad-prefix length. Padding is a
// property of the layout, not of the token values: the predictor embeds the
// pad prefix with the [PAD] embedding regardless of what token ids sit there
// and excludes those columns from attention.
struct AssembledInput {
    std::vector<int32_t> tokens;
    int pad = 0;  // number of leading pad positions
};

inline AssembledInput assemble_input(const std::vector<SemanticID>& history,
                                     const std::vector<int32_t>& next_block,
                                     const VocabLayout& vocab, const SequenceLayout& seq) {
    if (static_cast<int>(history.size()) > seq.n_max) {
        throw std::invalid_argument("assemble_input: history longer than n_max; caller must truncate");
    }
    if (static_cast<int>(next_block.size()) != seq.M) {
        throw std::invalid_argument("assemble_input: next block must have M tokens");
    }
    AssembledInput out;
    out.tokens.assign(static_cast<size_t>(seq.length()), vocab.pad_token());
    out.pad = (seq.n_max - static_cast<int>(history.size())) * seq.M;
    int pos = out.pad;
    for (const SemanticID& sid : history) {
        if (static_cast<int>(sid.size()) != seq.M) {
            throw std::invalid_argument("assemble_input: semantic id length != M");
        }
        for (int m = 0; m < seq.M; ++m) {
            out.tokens[static_cast<size_t>(pos++)] = vocab.token_of(m, sid[static_cast<size_t>(m)]);
        }
    }
    for (int m = 0; m < seq.M; ++m) {
        const int32_t tok = next_block[static_cast<size_t>(m)];
        if (tok != vocab.mask_token() && !(vocab.is_code(tok) && vocab.head_of(tok) == m)) {
            throw std::invalid_argument("assemble_input: next-block token out of range for its head");
        }
        out.tokens[static_cast<size_t>(seq.block_begin() + m)] = tok;
    }
    return out;
}

// Bidirectional mask predictor: token + position embeddings, a stack of
// pre-norm transformer blocks, final layer norm, and an untied projection to
// the token vocabulary. Logits are head-restricted: at a position with
// within-item offset m, everything outside head m's code block is forced to
// the -inf stand-in.
template <class T>
class MaskPredictor {
  public:
    PredictorConfig cfg;
    VocabLayout vocab;
    SequenceLayout seq;

    Embedding<T> tok_emb;
    Param<T> pos_emb;  // [L x d_model]
    std::vector<TransformerBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Dense<T> out_proj;

    struct Fwd {
        std::vector<int32_t> embedded_ids;  // ids actually embedded (pads overridden)
        std::vector<typename TransformerBlock<T>::Ctx> block_ctx;
        typename LayerNorm<T>::Ctx lnf_ctx;
        typename Dense<T>::Ctx proj_ctx;
        std::vector<const AttentionMask*> masks;
        int B = 0;
    };

    explicit MaskPredictor(const PredictorConfig& c)
        : cfg(c), vocab(c.M, c.K), seq(c.n_max, c.M),
          tok_emb(vocab.vocab_size(), c.d_model),
          pos_emb({static_cast<int64_t>(seq.length()), static_cast<int64_t>(c.d_model)}),
          ln_f(c.d_model),
          out_proj(c.d_model, vocab.vocab_size()) {
        blocks.reserve(static_cast<size_t>(c.layers));
        for (int i = 0; i < c.layers; ++i) blocks.emplace_back(c.d_model, c.heads, c.ff_dim());
        Rng rng = make_rng(c.seed, {0x70726564});
        tok_emb.init(rng);
        init_normal(pos_emb.w, rng, 0.02);
        for (auto& b : blocks) b.init(rng);
        out_proj.init(rng);
    }

    void collect_params(ParamList<T>& list) {
        tok_emb.collect("tok_emb", list);
        list.push_back({"pos_emb", &pos_emb});
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].collect("block." + std::to_string(i), list);
        }
        ln_f.collect("ln_f", list);
        out_proj.collect("out_proj", list);
    }

    void zero_grad() {
        ParamList<T> list;
        collect_params(list);
        for (auto& pr : list) pr.p->zero_grad();
    }

    // Batched forward over B assembled inputs; returns logits [B*L x vocab].
    Tensor<T> forward(const std::vector<AssembledInput>& batch, Fwd* ctx) const {
        const int B = static_cast<int>(batch.size());
        const int L = seq.length();
        const int V = vocab.vocab_size();
        if (B == 0) throw std::invalid_argument("predictor: empty batch");

        std::vector<int32_t> ids;
        ids.reserve(static_cast<size_t>(B) * L);
        for (const auto& in : batch) {
            if (static_cast<int>(in.tokens.size()) != L) {
                throw std::invalid_argument("predictor: sequence length mismatch");
            }
            if (in.pad < 0 || in.pad > seq.history_len() || in.pad % seq.M != 0) {
                throw std::invalid_argument("predictor: bad pad prefix");
            }
            for (int p = 0; p < L; ++p) {
                int32_t tok = in.tokens[static_cast<size_t>(p)];
                if (p < in.pad) {
                    tok = vocab.pad_token();
                } else if (tok < 0 || tok >= V) {
                    throw std::invalid_argument("predictor: token id out of range");
                }
                ids.push_back(tok);
            }
        }

        std::vector<const AttentionMask*> masks(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) masks[static_cast<size_t>(b)] = &mask_for_pad(batch[static_cast<size_t>(b)].pad);

        Tensor<T> x = tok_emb.forward(ids);
        for (int b = 0; b < B; ++b) {
            for (int p = 0; p < L; ++p) {
                T* row = x.ptr() + (static_cast<int64_t>(b) * L + p) * cfg.d_model;
                const T* pe = pos_emb.w.ptr() + static_cast<int64_t>(p) * cfg.d_model;
                for (int j = 0; j < cfg.d_model; ++j) row[j] += pe[j];
            }
        }

        Fwd local;
        Fwd& c = ctx ? *ctx : local;
        c.embedded_ids = std::move(ids);
        c.masks = masks;
        c.B = B;
        c.block_ctx.resize(blocks.size());
        for (size_t i = 0; i < blocks.size(); ++i) {
            x = blocks[i].forward(x, masks, B, L, &c.block_ctx[i]);
        }
        x = ln_f.forward(x, &c.lnf_ctx);
        Tensor<T> logits = out_proj.forward(x, &c.proj_ctx);

        // head restriction: only the position's own head block stays live
        for (int b = 0; b < B; ++b) {
            for (int p = 0; p < L; ++p) {
                const int m = seq.offset_of(p);
                T* row = logits.ptr() + (static_cast<int64_t>(b) * L + p) * V;
                const int lo = m * vocab.K, hi = lo + vocab.K;
                for (int t = 0; t < V; ++t) {
                    if (t < lo || t >= hi) row[t] = kNegInfLogit<T>;
                }
            }
        }
        require_finite(logits, "predictor logits");
        return logits;
    }

    // dlogits only carries gradient at head-allowed entries (the rest were
    // overwritten by a constant in forward).
    void backward(const Tensor<T>& dlogits, const Fwd& c) {
        const int B = c.B;
        const int L = seq.length();
        const int V = vocab.vocab_size();
        Tensor<T> dl = dlogits;
        for (int b = 0; b < B; ++b) {
            for (int p = 0; p < L; ++p) {
                const int m = seq.offset_of(p);
                T* row = dl.ptr() + (static_cast<int64_t>(b) * L + p) * V;
                const int lo = m * vocab.K, hi = lo + vocab.K;
                for (int t = 0; t < V; ++t) {
                    if (t < lo || t >= hi) row[t] = T(0);
                }
            }
        }
        Tensor<T> dx = out_proj.backward(dl, c.proj_ctx);
        dx = ln_f.backward(dx, c.lnf_ctx);
        for (size_t i = blocks.size(); i-- > 0;) {
            dx = blocks[i].backward(dx, c.block_ctx[i]);
        }
        for (int b = 0; b < B; ++b) {
            for (int p = 0; p < L; ++p) {
                const T* row = dx.ptr() + (static_cast<int64_t>(b) * L + p) * cfg.d_model;
                T* pg = pos_emb.g.ptr() + static_cast<int64_t>(p) * cfg.d_model;
                for (int j = 0; j < cfg.d_model; ++j) pg[j] += row[j];
            }
        }
        tok_emb.backward(c.embedded_ids, dx);
    }

    // Single-sequence convenience; pad inferred from the leading [PAD] run
    // (callers that mutate pad tokens must pass pad explicitly via forward).
    Tensor<T> predict(const std::vector<int32_t>& tokens) const {
        AssembledInput in;
        in.tokens = tokens;
        int pad = 0;
        while (pad < static_cast<int>(tokens.size()) && tokens[static_cast<size_t>(pad)] == vocab.pad_token()) {
            ++pad;
        }
        in.pad = pad - pad % seq.M;
        std::vector<AssembledInput> batch{in};
        return forward(batch, nullptr);
    }

  private:
    const AttentionMask& mask_for_pad(int pad) const {
        auto it = mask_cache_.find(pad);
        if (it == mask_cache_.end()) {
            it = mask_cache_.emplace(pad, AttentionMask::build(cfg.pattern, seq.length(), seq.M, pad)).first;
        }
        return it->second;
    }

    // built lazily per pad prefix; guarded only by construction order, see
    // prewarm_masks() for multi-threaded inference
    mutable std::map<int, AttentionMask> mask_cache_;

  public:
    // Build every possible pad-prefix mask up front so concurrent readers
    // never mutate the cache.
    void prewarm_masks() const {
        for (int items = 0; items <= seq.n_max; ++items) mask_for_pad(items * seq.M);
    }
};

}  // namespace diffrec
