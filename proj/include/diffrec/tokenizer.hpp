#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffrec/corpus.hpp"
#include "diffrec/nn.hpp"
#include "diffrec/optimizer.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/tensor.hpp"
#include "diffrec/vocab.hpp"

namespace diffrec {

struct TokenizerConfig {
    int M = 4;         // quantization heads
    int K = 256;       // codes per head
    int sub_dim = 32;  // per-head latent width; full latent is M * sub_dim
    int hidden = 512;
    double alpha = 0.25;  // commitment weight
    int epochs = 10000;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int batch = 2048;
    int revive_every = 100;  // dead-code reseeding cadence, in epochs
    uint64_t seed = 42;

    int latent_dim() const { return M * sub_dim; }
};

// Which loss terms contribute gradient. Values are always all computed; the
// flags exist so tests can isolate each term's gradient path.
struct VqTerms {
    bool recon = true;
    bool codebook = true;
    bool commit = true;
};

struct VqLoss {
    double total = 0.0;
    double recon = 0.0;     // mean over batch of |v - v_hat|^2
    double codebook = 0.0;  // mean over batch of sum_m |sg[z_m] - e_m|^2
    double commit = 0.0;    // mean over batch of sum_m alpha |z_m - sg[e_m]|^2
};

struct TokenizerTrainResult {
    std::vector<double> loss_curve;       // mean total loss per epoch
    std::vector<int> codes_used;          // distinct codes per head, final epoch
    std::vector<std::string> warnings;
};

// Multi-head vector quantizer: MLP encoder, per-head nearest-code lookup with
// a straight-through estimator, MLP decoder. Reconstruction gradient passes
// through quantization to the encoder; codebooks learn only from the
// codebook term; the commitment term pulls encoder outputs toward their
// codes.
template <class T>
class MultiHeadVqVae {
  public:
    TokenizerConfig cfg;
    int in_dim;

    Dense<T> enc1, enc2;
    Dense<T> dec1, dec2;
    std::vector<Param<T>> codebooks;  // M tensors of [K x sub_dim]

    struct Fwd {
        typename Dense<T>::Ctx enc1_ctx, enc2_ctx, dec1_ctx, dec2_ctx;
        typename Gelu<T>::Ctx enc_act, dec_act;
        Tensor<T> x;        // input batch
        Tensor<T> z;        // encoder output [B x latent]
        Tensor<T> zq;       // quantized latent [B x latent]
        Tensor<T> recon;    // decoder output [B x in_dim]
        std::vector<int32_t> codes;  // [B x M]
        VqTerms terms;
        int B = 0;
    };

    MultiHeadVqVae(int input_dim, const TokenizerConfig& c)
        : cfg(c), in_dim(input_dim),
          enc1(input_dim, c.hidden), enc2(c.hidden, c.latent_dim()),
          dec1(c.latent_dim(), c.hidden), dec2(c.hidden, input_dim) {
        if (c.M <= 0 || c.K <= 0 || c.sub_dim <= 0) {
            throw std::invalid_argument("tokenizer: M, K, sub_dim must be positive");
        }
        Rng rng = make_rng(c.seed, {0x746f6b65});
        enc1.init(rng);
        enc2.init(rng);
        dec1.init(rng);
        dec2.init(rng);
        codebooks.reserve(static_cast<size_t>(c.M));
        for (int m = 0; m < c.M; ++m) {
            codebooks.emplace_back(std::vector<int64_t>{c.K, c.sub_dim});
            init_normal(codebooks.back().w, rng, 1.0 / std::sqrt(static_cast<double>(c.sub_dim)));
        }
    }

    void collect_params(ParamList<T>& list) {
        enc1.collect("enc1", list);
        enc2.collect("enc2", list);
        dec1.collect("dec1", list);
        dec2.collect("dec2", list);
        for (int m = 0; m < cfg.M; ++m) {
            list.push_back({"codebook." + std::to_string(m), &codebooks[static_cast<size_t>(m)]});
        }
    }

    void zero_grad() {
        ParamList<T> list;
        collect_params(list);
        for (auto& pr : list) pr.p->zero_grad();
    }

    Tensor<T> encode(const Tensor<T>& x, Fwd* ctx) const {
        Fwd local;
        Fwd& c = ctx ? *ctx : local;
        Tensor<T> h = enc1.forward(x, &c.enc1_ctx);
        h = Gelu<T>::forward(h, &c.enc_act);
        return enc2.forward(h, &c.enc2_ctx);
    }

    // Nearest code per head by squared euclidean distance; ties resolve to
    // the lowest code index.
    int32_t nearest_code(int head, const T* sub) const {
        const Param<T>& cb = codebooks[static_cast<size_t>(head)];
        int32_t best = 0;
        T best_d = std::numeric_limits<T>::max();
        for (int32_t code = 0; code < cfg.K; ++code) {
            const T* e = cb.w.ptr() + static_cast<int64_t>(code) * cfg.sub_dim;
            T d = T(0);
            for (int j = 0; j < cfg.sub_dim; ++j) {
                const T diff = sub[j] - e[j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = code;
            }
        }
        return best;
    }

    // codes out: [B x M]; returns quantized latents [B x latent]
    Tensor<T> quantize(const Tensor<T>& z, std::vector<int32_t>& codes) const {
        const int64_t B = z.shape[0];
        if (z.shape[1] != cfg.latent_dim()) throw std::invalid_argument("quantize: latent width mismatch");
        Tensor<T> zq(z.shape);
        codes.assign(static_cast<size_t>(B) * cfg.M, 0);
        for (int64_t i = 0; i < B; ++i) {
            const T* zrow = z.ptr() + i * cfg.latent_dim();
            T* qrow = zq.ptr() + i * cfg.latent_dim();
            for (int m = 0; m < cfg.M; ++m) {
                const T* sub = zrow + m * cfg.sub_dim;
                const int32_t code = nearest_code(m, sub);
                codes[static_cast<size_t>(i * cfg.M + m)] = code;
                const T* e = codebooks[static_cast<size_t>(m)].w.ptr() +
                             static_cast<int64_t>(code) * cfg.sub_dim;
                std::copy(e, e + cfg.sub_dim, qrow + m * cfg.sub_dim);
            }
        }
        return zq;
    }

    VqLoss forward_loss(const Tensor<T>& x, const VqTerms& terms, Fwd* ctx) const {
        Fwd local;
        Fwd& c = ctx ? *ctx : local;
        c.terms = terms;
        c.x = x;
        c.B = static_cast<int>(x.shape[0]);
        c.z = encode(x, &c);
        c.zq = quantize(c.z, c.codes);
        Tensor<T> h = dec1.forward(c.zq, &c.dec1_ctx);
        h = Gelu<T>::forward(h, &c.dec_act);
        c.recon = dec2.forward(h, &c.dec2_ctx);

        VqLoss loss;
        const int64_t B = x.shape[0];
        for (int64_t i = 0; i < B * in_dim; ++i) {
            const double diff = static_cast<double>(c.recon.data[static_cast<size_t>(i)]) -
                                static_cast<double>(x.data[static_cast<size_t>(i)]);
            loss.recon += diff * diff;
        }
        double vq = 0.0;
        for (int64_t i = 0; i < B * cfg.latent_dim(); ++i) {
            const double diff = static_cast<double>(c.z.data[static_cast<size_t>(i)]) -
                                static_cast<double>(c.zq.data[static_cast<size_t>(i)]);
            vq += diff * diff;
        }
        loss.recon /= static_cast<double>(B);
        loss.codebook = vq / static_cast<double>(B);
        loss.commit = cfg.alpha * vq / static_cast<double>(B);
        loss.total = (terms.recon ? loss.recon : 0.0) + (terms.codebook ? loss.codebook : 0.0) +
                     (terms.commit ? loss.commit : 0.0);
        return loss;
    }

    void backward(const Fwd& c) {
        const int64_t B = c.x.shape[0];
        const T inv_b = T(1) / static_cast<T>(B);

        Tensor<T> dz({B, cfg.latent_dim()});
        dz.fill(T(0));

        if (c.terms.recon) {
            Tensor<T> drecon({B, in_dim});
            for (int64_t i = 0; i < B * in_dim; ++i) {
                drecon.data[static_cast<size_t>(i)] =
                    T(2) * inv_b * (c.recon.data[static_cast<size_t>(i)] - c.x.data[static_cast<size_t>(i)]);
            }
            Tensor<T> dh = dec2.backward(drecon, c.dec2_ctx);
            dh = Gelu<T>::backward(dh, c.dec_act);
            Tensor<T> dzq = dec1.backward(dh, c.dec1_ctx);
            // straight-through: the quantized latent's gradient lands on the
            // encoder output unchanged
            for (int64_t i = 0; i < dz.size(); ++i) {
                dz.data[static_cast<size_t>(i)] += dzq.data[static_cast<size_t>(i)];
            }
        }
        if (c.terms.commit) {
            const T scale = T(2) * static_cast<T>(cfg.alpha) * inv_b;
            for (int64_t i = 0; i < dz.size(); ++i) {
                dz.data[static_cast<size_t>(i)] +=
                    scale * (c.z.data[static_cast<size_t>(i)] - c.zq.data[static_cast<size_t>(i)]);
            }
        }
        if (c.terms.codebook) {
            for (int64_t i = 0; i < B; ++i) {
                const T* zrow = c.z.ptr() + i * cfg.latent_dim();
                for (int m = 0; m < cfg.M; ++m) {
                    const int32_t code = c.codes[static_cast<size_t>(i * cfg.M + m)];
                    Param<T>& cb = codebooks[static_cast<size_t>(m)];
                    const T* e = cb.w.ptr() + static_cast<int64_t>(code) * cfg.sub_dim;
                    T* g = cb.g.ptr() + static_cast<int64_t>(code) * cfg.sub_dim;
                    const T* sub = zrow + m * cfg.sub_dim;
                    for (int j = 0; j < cfg.sub_dim; ++j) {
                        g[j] += T(2) * inv_b * (e[j] - sub[j]);
                    }
                }
            }
        }

        Tensor<T> dh = enc2.backward(dz, c.enc2_ctx);
        dh = Gelu<T>::backward(dh, c.enc_act);
        enc1.backward(dh, c.enc1_ctx);
    }

    // Seeds each codebook with k-means over the current encoder outputs:
    // k-means++ choice of centers followed by a few Lloyd rounds.
    void kmeans_init(const Tensor<T>& data, int lloyd_iters = 10) {
        Tensor<T> z = encode(data, nullptr);
        const int64_t n = z.shape[0];
        Rng rng = make_rng(cfg.seed, {0x6b6d6531});
        std::uniform_int_distribution<int64_t> any_row(0, n - 1);

        for (int m = 0; m < cfg.M; ++m) {
            Param<T>& cb = codebooks[static_cast<size_t>(m)];
            auto point = [&](int64_t i) { return z.ptr() + i * cfg.latent_dim() + m * cfg.sub_dim; };
            auto center = [&](int32_t c) { return cb.w.ptr() + static_cast<int64_t>(c) * cfg.sub_dim; };
            auto dist2 = [&](const T* a, const T* b) {
                double d = 0.0;
                for (int j = 0; j < cfg.sub_dim; ++j) {
                    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
                    d += diff * diff;
                }
                return d;
            };

            std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::max());
            {
                const T* p = point(any_row(rng));
                std::copy(p, p + cfg.sub_dim, center(0));
            }
            for (int32_t c = 1; c < cfg.K; ++c) {
                double total = 0.0;
                for (int64_t i = 0; i < n; ++i) {
                    d2[static_cast<size_t>(i)] =
                        std::min(d2[static_cast<size_t>(i)], dist2(point(i), center(c - 1)));
                    total += d2[static_cast<size_t>(i)];
                }
                int64_t pick;
                if (total <= 0.0) {
                    pick = any_row(rng);
                } else {
                    std::uniform_real_distribution<double> u(0.0, total);
                    double want = u(rng), acc = 0.0;
                    pick = n - 1;
                    for (int64_t i = 0; i < n; ++i) {
                        acc += d2[static_cast<size_t>(i)];
                        if (acc >= want) {
                            pick = i;
                            break;
                        }
                    }
                }
                const T* p = point(pick);
                std::copy(p, p + cfg.sub_dim, center(c));
            }

            std::vector<int32_t> assign(static_cast<size_t>(n));
            Tensor<double> sums({cfg.K, cfg.sub_dim});
            std::vector<int64_t> counts(static_cast<size_t>(cfg.K));
            for (int iter = 0; iter < lloyd_iters; ++iter) {
                sums.fill(0.0);
                std::fill(counts.begin(), counts.end(), 0);
                for (int64_t i = 0; i < n; ++i) {
                    int32_t best = 0;
                    double best_d = std::numeric_limits<double>::max();
                    for (int32_t c = 0; c < cfg.K; ++c) {
                        const double d = dist2(point(i), center(c));
                        if (d < best_d) {
                            best_d = d;
                            best = c;
                        }
                    }
                    assign[static_cast<size_t>(i)] = best;
                    counts[static_cast<size_t>(best)]++;
                    double* srow = sums.ptr() + static_cast<int64_t>(best) * cfg.sub_dim;
                    const T* p = point(i);
                    for (int j = 0; j < cfg.sub_dim; ++j) srow[j] += static_cast<double>(p[j]);
                }
                for (int32_t c = 0; c < cfg.K; ++c) {
                    if (counts[static_cast<size_t>(c)] == 0) continue;  // keep previous center
                    const double* srow = sums.ptr() + static_cast<int64_t>(c) * cfg.sub_dim;
                    T* crow = center(c);
                    for (int j = 0; j < cfg.sub_dim; ++j) {
                        crow[j] = static_cast<T>(srow[j] / static_cast<double>(counts[static_cast<size_t>(c)]));
                    }
                }
            }
        }
    }

    // One optimization run over the item vectors. Epochs iterate shuffled
    // batches; a code that went unused for a whole revival window is reseeded
    // from a live encoder output.
    TokenizerTrainResult train(const Tensor<T>& data) {
        const int64_t n = data.shape[0];
        if (n == 0) throw std::invalid_argument("tokenizer: no training vectors");
        if (data.shape[1] != in_dim) throw std::invalid_argument("tokenizer: input width mismatch");

        kmeans_init(data);

        ParamList<T> params;
        collect_params(params);
        AdamW<T> opt(cfg.lr, cfg.weight_decay);

        TokenizerTrainResult result;
        result.loss_curve.reserve(static_cast<size_t>(cfg.epochs));

        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        std::vector<std::vector<char>> used(static_cast<size_t>(cfg.M),
                                            std::vector<char>(static_cast<size_t>(cfg.K), 0));
        Tensor<T> last_z;

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            Rng shuffle_rng = make_rng(cfg.seed, {0x73687566, static_cast<uint64_t>(epoch)});
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            for (auto& u : used) std::fill(u.begin(), u.end(), 0);

            double epoch_loss = 0.0;
            int64_t batches = 0;
            for (int64_t start = 0; start < n; start += cfg.batch) {
                const int64_t bsz = std::min<int64_t>(cfg.batch, n - start);
                Tensor<T> batch({bsz, in_dim});
                for (int64_t i = 0; i < bsz; ++i) {
                    const T* src = data.ptr() + order[static_cast<size_t>(start + i)] * in_dim;
                    std::copy(src, src + in_dim, batch.ptr() + i * in_dim);
                }
                zero_grad();
                Fwd ctx;
                const VqLoss loss = forward_loss(batch, VqTerms{}, &ctx);
                backward(ctx);
                opt.step(params);
                epoch_loss += loss.total;
                ++batches;
                for (int64_t i = 0; i < bsz; ++i) {
                    for (int m = 0; m < cfg.M; ++m) {
                        used[static_cast<size_t>(m)]
                            [static_cast<size_t>(ctx.codes[static_cast<size_t>(i * cfg.M + m)])] = 1;
                    }
                }
                last_z = std::move(ctx.z);
            }
            result.loss_curve.push_back(epoch_loss / static_cast<double>(batches));

            if (cfg.revive_every > 0 && (epoch + 1) % cfg.revive_every == 0 && last_z.size() > 0) {
                revive_dead_codes(used, last_z, epoch);
            }
        }

        result.codes_used.assign(static_cast<size_t>(cfg.M), 0);
        for (int m = 0; m < cfg.M; ++m) {
            int distinct = 0;
            for (char u : used[static_cast<size_t>(m)]) distinct += u ? 1 : 0;
            result.codes_used[static_cast<size_t>(m)] = distinct;
            if (distinct < 2) {
                std::string w = "codebook head " + std::to_string(m) + " collapsed to " +
                                std::to_string(distinct) + " code(s)";
                result.warnings.push_back(w);
                std::cerr << "warning: " << w << "\n";
            }
        }
        return result;
    }

    // Per-coordinate mean squared reconstruction error over a dataset.
    double reconstruction_mse(const Tensor<T>& data) const {
        Fwd ctx;
        const VqLoss loss = forward_loss(data, VqTerms{}, &ctx);
        return loss.recon / static_cast<double>(in_dim);
    }

  private:
    void revive_dead_codes(const std::vector<std::vector<char>>& used, const Tensor<T>& z, int epoch) {
        const int64_t rows = z.shape[0];
        Rng rng = make_rng(cfg.seed, {0x72657669, static_cast<uint64_t>(epoch)});
        std::uniform_int_distribution<int64_t> any_row(0, rows - 1);
        std::normal_distribution<double> gauss(0.0, 1e-3);
        for (int m = 0; m < cfg.M; ++m) {
            Param<T>& cb = codebooks[static_cast<size_t>(m)];
            for (int32_t c = 0; c < cfg.K; ++c) {
                if (used[static_cast<size_t>(m)][static_cast<size_t>(c)]) continue;
                const T* src = z.ptr() + any_row(rng) * cfg.latent_dim() + m * cfg.sub_dim;
                T* dst = cb.w.ptr() + static_cast<int64_t>(c) * cfg.sub_dim;
                for (int j = 0; j < cfg.sub_dim; ++j) {
                    dst[j] = src[j] + static_cast<T>(gauss(rng));
                }
            }
        }
    }
};

// Item catalog tokenized to semantic ids. Distinct items may collide on the
// same id; by_sid keeps every item carrying each id, in catalog order.
struct SidCatalog {
    int M = 0;
    int K = 0;
    std::vector<std::string> item_ids;
    std::vector<SemanticID> sids;  // parallel to item_ids
    std::unordered_map<std::string, int32_t> item_index;
    std::map<SemanticID, std::vector<int32_t>> by_sid;

    void add(std::string item_id, SemanticID sid) {
        const int32_t idx = static_cast<int32_t>(item_ids.size());
        if (!item_index.emplace(item_id, idx).second) {
            throw std::runtime_error("sid catalog: duplicate item id " + item_id);
        }
        by_sid[sid].push_back(idx);
        item_ids.push_back(std::move(item_id));
        sids.push_back(std::move(sid));
    }

    double collision_rate() const {
        if (item_ids.empty()) return 0.0;
        return 1.0 - static_cast<double>(by_sid.size()) / static_cast<double>(item_ids.size());
    }

    const SemanticID& sid_of(int32_t item) const { return sids[static_cast<size_t>(item)]; }

    const std::vector<int32_t>* items_with(const SemanticID& sid) const {
        auto it = by_sid.find(sid);
        return it == by_sid.end() ? nullptr : &it->second;
    }
};

template <class T>
SidCatalog tokenize_catalog(const MultiHeadVqVae<T>& model, const EmbeddingTable& table) {
    Tensor<T> data({table.count(), table.dim});
    for (int64_t i = 0; i < data.size(); ++i) {
        data.data[static_cast<size_t>(i)] = static_cast<T>(table.vectors.data[static_cast<size_t>(i)]);
    }
    Tensor<T> z = model.encode(data, nullptr);
    std::vector<int32_t> codes;
    model.quantize(z, codes);

    SidCatalog catalog;
    catalog.M = model.cfg.M;
    catalog.K = model.cfg.K;
    for (int32_t i = 0; i < table.count(); ++i) {
        SemanticID sid(codes.begin() + static_cast<int64_t>(i) * model.cfg.M,
                       codes.begin() + static_cast<int64_t>(i + 1) * model.cfg.M);
        catalog.add(table.ids[static_cast<size_t>(i)], std::move(sid));
    }
    return catalog;
}

void save_sids(const std::filesystem::path& path, const SidCatalog& catalog);
SidCatalog load_sids(const std::filesystem::path& path, int M, int K);

}  // namespace diffrec
