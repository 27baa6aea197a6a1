#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffrec/nn.hpp"
#include "diffrec/tensor.hpp"

namespace diffrec {

enum class AttentionPattern {
    bidirectional,
    causal,
    inter_item_causal,  // causal across items, bidirectional within an item
    intra_item_causal,  // causal within an item, bidirectional across items
};

inline std::string to_string(AttentionPattern p) {
    switch (p) {
        case AttentionPattern::bidirectional: return "bidirectional";
        case AttentionPattern::causal: return "causal";
        case AttentionPattern::inter_item_causal: return "inter-item-causal";
        case AttentionPattern::intra_item_causal: return "intra-item-causal";
    }
    return "?";
}

inline AttentionPattern attention_pattern_from_string(const std::string& s) {
    if (s == "bidirectional") return AttentionPattern::bidirectional;
    if (s == "causal") return AttentionPattern::causal;
    if (s == "inter-item-causal") return AttentionPattern::inter_item_causal;
    if (s == "intra-item-causal") return AttentionPattern::intra_item_causal;
    throw std::invalid_argument("unknown attention pattern: " + s);
}

// Binary L x L attention-permission matrix derived from a pattern, the
// item-boundary layout (item_size consecutive positions per item) and the
// left-pad prefix. Padding columns are never attended; rows that are
// themselves padding attend to all non-pad columns so every row stays
// normalizable (their outputs are never consumed).
struct AttentionMask {
    AttentionPattern pattern = AttentionPattern::bidirectional;
    int L = 0;
    std::vector<uint8_t> allow;  // row-major L x L

    bool at(int i, int j) const { return allow[static_cast<size_t>(i) * L + j] != 0; }

    static AttentionMask build(AttentionPattern pattern, int L, int item_size, int pad_prefix) {
        if (L <= 0 || item_size <= 0 || pad_prefix < 0 || pad_prefix >= L) {
            throw std::invalid_argument("attention mask: bad layout");
        }
        AttentionMask m;
        m.pattern = pattern;
        m.L = L;
        m.allow.assign(static_cast<size_t>(L) * L, 0);
        auto item_of = [item_size](int pos) { return pos / item_size; };
        for (int i = 0; i < L; ++i) {
            const bool row_is_pad = i < pad_prefix;
            for (int j = pad_prefix; j < L; ++j) {
                bool ok = false;
                if (row_is_pad) {
                    ok = true;
                } else {
                    switch (pattern) {
                        case AttentionPattern::bidirectional: ok = true; break;
                        case AttentionPattern::causal: ok = j <= i; break;
                        case AttentionPattern::inter_item_causal: ok = item_of(j) <= item_of(i); break;
                        case AttentionPattern::intra_item_causal:
                            ok = item_of(j) != item_of(i) || j <= i;
                            break;
                    }
                }
                m.allow[static_cast<size_t>(i) * L + j] = ok ? 1 : 0;
            }
        }
        for (int i = 0; i < L; ++i) {
            bool any = false;
            for (int j = 0; j < L && !any; ++j) any = m.at(i, j);
            if (!any) throw std::runtime_error("attention mask: row " + std::to_string(i) + " has no allowed column");
        }
        return m;
    }
};

// Large negative stand-in for -inf; exp() underflows it to exactly 0.
template <class T>
constexpr T kNegInfLogit = static_cast<T>(-1e9);

// Pre-norm transformer block: x + Attn(LN(x)) followed by h + FFN(LN(h)).
// Operates on a batch of B sequences flattened to [B*L x d_model]; each
// sequence carries its own attention mask.
template <class T>
struct TransformerBlock {
    int d_model = 0, heads = 0, d_head = 0, d_ff = 0;
    LayerNorm<T> ln1, ln2;
    Dense<T> wq, wk, wv, wo, ff1, ff2;

    struct Ctx {
        typename LayerNorm<T>::Ctx ln1c, ln2c;
        typename Dense<T>::Ctx qc, kc, vc, oc, f1c, f2c;
        typename Gelu<T>::Ctx gc;
        Tensor<T> q, k, v;
        Tensor<T> attn;     // softmax weights, [B * heads * L * L]
        Tensor<T> ctxcat;   // attention context, [B*L x d_model]
        std::vector<const AttentionMask*> masks;
        int B = 0, L = 0;
    };

    TransformerBlock() = default;
    TransformerBlock(int d, int h, int ff)
        : d_model(d), heads(h), d_head(d / h), d_ff(ff),
          ln1(d), ln2(d),
          wq(d, d), wk(d, d), wv(d, d), wo(d, d), ff1(d, ff), ff2(ff, d) {
        if (d % h != 0) throw std::invalid_argument("d_model must be divisible by head count");
    }

    void init(Rng& rng) {
        wq.init(rng); wk.init(rng); wv.init(rng); wo.init(rng);
        ff1.init(rng); ff2.init(rng);
    }

    void collect(const std::string& p, ParamList<T>& list) {
        ln1.collect(p + ".ln1", list);
        wq.collect(p + ".wq", list);
        wk.collect(p + ".wk", list);
        wv.collect(p + ".wv", list);
        wo.collect(p + ".wo", list);
        ln2.collect(p + ".ln2", list);
        ff1.collect(p + ".ff1", list);
        ff2.collect(p + ".ff2", list);
    }

    Tensor<T> forward(const Tensor<T>& x, const std::vector<const AttentionMask*>& masks,
                      int B, int L, Ctx* ctx) const {
        Ctx local;
        Ctx& c = ctx ? *ctx : local;
        c.B = B;
        c.L = L;
        c.masks = masks;
        const int64_t rows = static_cast<int64_t>(B) * L;

        Tensor<T> a = ln1.forward(x, &c.ln1c);
        c.q = wq.forward(a, &c.qc);
        c.k = wk.forward(a, &c.kc);
        c.v = wv.forward(a, &c.vc);

        c.attn = Tensor<T>({static_cast<int64_t>(B) * heads, static_cast<int64_t>(L) * L});
        c.ctxcat = Tensor<T>({rows, d_model});
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_head)));
        auto qm = as_matrix(c.q, rows, d_model);
        auto km = as_matrix(c.k, rows, d_model);
        auto vm = as_matrix(c.v, rows, d_model);
        auto cm = as_matrix(c.ctxcat, rows, d_model);
        for (int b = 0; b < B; ++b) {
            const AttentionMask& mask = *masks[static_cast<size_t>(b)];
            for (int h = 0; h < heads; ++h) {
                T* w = c.attn.ptr() + (static_cast<int64_t>(b) * heads + h) * L * L;
                MatMap<T> wm(w, L, L);
                wm.noalias() = qm.block(b * L, h * d_head, L, d_head) *
                               km.block(b * L, h * d_head, L, d_head).transpose() * scale;
                for (int i = 0; i < L; ++i) {
                    for (int j = 0; j < L; ++j) {
                        if (!mask.at(i, j)) w[static_cast<int64_t>(i) * L + j] = kNegInfLogit<T>;
                    }
                }
                for (int i = 0; i < L; ++i) {
                    T* row = w + static_cast<int64_t>(i) * L;
                    T mx = row[0];
                    for (int j = 1; j < L; ++j) mx = std::max(mx, row[j]);
                    double sum = 0;
                    for (int j = 0; j < L; ++j) {
                        row[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)));
                        sum += row[j];
                    }
                    const T inv = static_cast<T>(1.0 / sum);
                    for (int j = 0; j < L; ++j) row[j] *= inv;
                }
                cm.block(b * L, h * d_head, L, d_head).noalias() =
                    wm * vm.block(b * L, h * d_head, L, d_head);
            }
        }

        Tensor<T> proj = wo.forward(c.ctxcat, &c.oc);
        Tensor<T> h1(x.shape);
        for (int64_t i = 0; i < x.size(); ++i) h1[i] = x[i] + proj[i];

        Tensor<T> f = ln2.forward(h1, &c.ln2c);
        Tensor<T> u = ff1.forward(f, &c.f1c);
        Tensor<T> g = Gelu<T>::forward(u, &c.gc);
        Tensor<T> ff = ff2.forward(g, &c.f2c);
        Tensor<T> y(h1.shape);
        for (int64_t i = 0; i < h1.size(); ++i) y[i] = h1[i] + ff[i];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, const Ctx& c) {
        const int B = c.B, L = c.L;
        const int64_t rows = static_cast<int64_t>(B) * L;

        // y = h1 + ff2(gelu(ff1(ln2(h1))))
        Tensor<T> dg = ff2.backward(dy, c.f2c);
        Tensor<T> du = Gelu<T>::backward(dg, c.gc);
        Tensor<T> df = ff1.backward(du, c.f1c);
        Tensor<T> dh1 = ln2.backward(df, c.ln2c);
        for (int64_t i = 0; i < dh1.size(); ++i) dh1[i] += dy[i];

        // h1 = x + wo(ctxcat)
        Tensor<T> dctx = wo.backward(dh1, c.oc);

        Tensor<T> dq({rows, d_model}), dk({rows, d_model}), dv({rows, d_model});
        dq.fill(T(0)); dk.fill(T(0)); dv.fill(T(0));
        auto qm = as_matrix(c.q, rows, d_model);
        auto km = as_matrix(c.k, rows, d_model);
        auto vm = as_matrix(c.v, rows, d_model);
        auto dqm = as_matrix(dq, rows, d_model);
        auto dkm = as_matrix(dk, rows, d_model);
        auto dvm = as_matrix(dv, rows, d_model);
        auto dcm = as_matrix(dctx, rows, d_model);
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_head)));
        Tensor<T> dS({static_cast<int64_t>(L), static_cast<int64_t>(L)});
        for (int b = 0; b < B; ++b) {
            const AttentionMask& mask = *c.masks[static_cast<size_t>(b)];
            for (int h = 0; h < heads; ++h) {
                const T* w = c.attn.ptr() + (static_cast<int64_t>(b) * heads + h) * L * L;
                ConstMatMap<T> wm(w, L, L);
                // dV = W^T * dctx_head
                dvm.block(b * L, h * d_head, L, d_head).noalias() +=
                    wm.transpose() * dcm.block(b * L, h * d_head, L, d_head);
                // dW = dctx_head * V^T
                MatMap<T> dSm(dS.ptr(), L, L);
                dSm.noalias() = dcm.block(b * L, h * d_head, L, d_head) *
                                vm.block(b * L, h * d_head, L, d_head).transpose();
                // softmax backward row-wise; disallowed entries get zero grad
                for (int i = 0; i < L; ++i) {
                    const T* wr = w + static_cast<int64_t>(i) * L;
                    T* dr = dS.ptr() + static_cast<int64_t>(i) * L;
                    double dot = 0;
                    for (int j = 0; j < L; ++j) dot += static_cast<double>(dr[j]) * wr[j];
                    for (int j = 0; j < L; ++j) {
                        dr[j] = mask.at(i, j)
                                    ? static_cast<T>(wr[j] * (static_cast<double>(dr[j]) - dot))
                                    : T(0);
                    }
                }
                dqm.block(b * L, h * d_head, L, d_head).noalias() +=
                    dSm * km.block(b * L, h * d_head, L, d_head) * scale;
                dkm.block(b * L, h * d_head, L, d_head).noalias() +=
                    dSm.transpose() * qm.block(b * L, h * d_head, L, d_head) * scale;
            }
        }

        Tensor<T> da = wq.backward(dq, c.qc);
        Tensor<T> dak = wk.backward(dk, c.kc);
        Tensor<T> dav = wv.backward(dv, c.vc);
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dak[i] + dav[i];
        Tensor<T> dx = ln1.backward(da, c.ln1c);
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] += dh1[i];
        return dx;
    }
};

}  // namespace diffrec
