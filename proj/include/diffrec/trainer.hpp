#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffrec/corpus.hpp"
#include "diffrec/masking.hpp"
#include "diffrec/metrics.hpp"
#include "diffrec/optimizer.hpp"
#include "diffrec/predictor.hpp"
#include "diffrec/tokenizer.hpp"

namespace diffrec {

struct TrainPair {
    std::vector<SemanticID> history;
    SemanticID target;
};

// Sliding next-item windows over each user's training prefix, oldest first.
// pairs_per_user > 0 keeps only the most recent windows per user.
inline std::vector<TrainPair> build_train_pairs(const LooSplit& split, const SidCatalog& catalog,
                                                int n_max, int pairs_per_user) {
    std::vector<int32_t> split_to_cat(split.item_ids.size());
    for (size_t i = 0; i < split.item_ids.size(); ++i) {
        auto it = catalog.item_index.find(split.item_ids[i]);
        if (it == catalog.item_index.end()) {
            throw std::runtime_error("no semantic id for item " + split.item_ids[i]);
        }
        split_to_cat[i] = it->second;
    }
    std::vector<TrainPair> pairs;
    for (const auto& u : split.users) {
        const std::vector<int32_t> items = LooSplit::train_items(u);
        const int n = static_cast<int>(items.size());
        const int first = pairs_per_user > 0 ? std::max(1, n - pairs_per_user) : 1;
        for (int j = first; j < n; ++j) {
            TrainPair p;
            std::vector<int32_t> hist(items.begin(), items.begin() + j);
            hist = truncate_history(hist, n_max);
            p.history.reserve(hist.size());
            for (int32_t item : hist) {
                p.history.push_back(catalog.sid_of(split_to_cat[static_cast<size_t>(item)]));
            }
            p.target = catalog.sid_of(split_to_cat[static_cast<size_t>(items[static_cast<size_t>(j)])]);
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

struct MaskedExample {
    AssembledInput input;
    double inv_r = 1.0;            // loss weight, 1/r for ratio-masked history
    std::vector<int> positions;    // positions contributing to the loss
    std::vector<int32_t> targets;  // original tokens at those positions
};

namespace detail {

inline MaskedExample ratio_masked_example(AssembledInput input, const std::vector<int>& eligible,
                                          int32_t mask_token, Rng& rng, double fixed_r) {
    MaskedExample ex;
    ex.input = std::move(input);
    MaskSample s = fixed_r > 0.0
                       ? sample_mask_with_ratio(ex.input.tokens, eligible, mask_token, fixed_r, rng)
                       : sample_mask(ex.input.tokens, eligible, mask_token, rng);
    ex.inv_r = 1.0 / s.r;
    ex.positions = s.masked_positions;
    for (int p : ex.positions) ex.targets.push_back(s.original[static_cast<size_t>(p)]);
    ex.input.tokens = std::move(s.masked);
    return ex;
}

}  // namespace detail

// History masking: a ratio-masked history with the whole next block masked.
// Loss covers only the masked history positions. fixed_r > 0 pins the ratio
// instead of drawing it.
inline MaskedExample build_his_example(const TrainPair& pair, const VocabLayout& vocab,
                                       const SequenceLayout& seq, Rng& rng, double fixed_r = 0.0) {
    std::vector<int32_t> all_mask(static_cast<size_t>(seq.M), vocab.mask_token());
    AssembledInput input = assemble_input(pair.history, all_mask, vocab, seq);
    std::vector<int> eligible;
    for (int p = input.pad; p < seq.block_begin(); ++p) eligible.push_back(p);
    return detail::ratio_masked_example(std::move(input), eligible, vocab.mask_token(), rng, fixed_r);
}

// Item masking: history fully visible, next block ratio-masked. Loss covers
// the masked block positions against the target item's codes.
inline MaskedExample build_item_example(const TrainPair& pair, const VocabLayout& vocab,
                                        const SequenceLayout& seq, Rng& rng, double fixed_r = 0.0) {
    std::vector<int32_t> block(static_cast<size_t>(seq.M));
    for (int m = 0; m < seq.M; ++m) {
        block[static_cast<size_t>(m)] = vocab.token_of(m, pair.target[static_cast<size_t>(m)]);
    }
    AssembledInput input = assemble_input(pair.history, block, vocab, seq);
    std::vector<int> eligible;
    for (int m = 0; m < seq.M; ++m) eligible.push_back(seq.block_begin() + m);
    return detail::ratio_masked_example(std::move(input), eligible, vocab.mask_token(), rng, fixed_r);
}

// Mean over the batch of inv_r-weighted token negative log likelihood at each
// example's loss positions. grad_scale multiplies only the gradient, so a
// weighted term can report its unscaled value.
template <class T>
double masked_nll(MaskPredictor<T>& model, const std::vector<MaskedExample>& batch, double grad_scale,
                  bool with_grad) {
    if (batch.empty()) throw std::invalid_argument("masked_nll: empty batch");
    const int L = model.seq.length();
    const int V = model.vocab.vocab_size();
    std::vector<AssembledInput> inputs;
    inputs.reserve(batch.size());
    for (const auto& ex : batch) inputs.push_back(ex.input);

    typename MaskPredictor<T>::Fwd ctx;
    Tensor<T> logits = model.forward(inputs, &ctx);

    Tensor<T> dlogits;
    if (with_grad) {
        dlogits = Tensor<T>(logits.shape);
        dlogits.fill(T(0));
    }

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const MaskedExample& ex = batch[i];
        for (size_t t = 0; t < ex.positions.size(); ++t) {
            const int pos = ex.positions[t];
            const int32_t target = ex.targets[t];
            if (target < 0 || target >= V) throw std::invalid_argument("masked_nll: target out of range");
            const T* row = logits.ptr() + (static_cast<int64_t>(i) * L + pos) * V;

            double mx = -std::numeric_limits<double>::infinity();
            for (int v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
            double denom = 0.0;
            for (int v = 0; v < V; ++v) denom += std::exp(static_cast<double>(row[v]) - mx);
            const double log_denom = std::log(denom);
            const double logp = static_cast<double>(row[target]) - mx - log_denom;
            loss += -ex.inv_r * logp * inv_batch;

            if (with_grad) {
                T* drow = dlogits.ptr() + (static_cast<int64_t>(i) * L + pos) * V;
                const double w = grad_scale * ex.inv_r * inv_batch;
                for (int v = 0; v < V; ++v) {
                    const double p = std::exp(static_cast<double>(row[v]) - mx - log_denom);
                    drow[v] += static_cast<T>(w * (p - (v == target ? 1.0 : 0.0)));
                }
            }
        }
    }
    if (!std::isfinite(loss)) throw std::runtime_error("masked_nll: non-finite loss");
    if (with_grad) model.backward(dlogits, ctx);
    return loss;
}

struct TrainConfig {
    double lambda_his = 1.0;
    int epochs = 150;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int batch = 1024;
    int patience = 10;       // validation rounds without improvement before stopping
    int val_every = 1;       // epochs between validations
    int val_users = 1000;    // 0 evaluates every user
    int val_beam = 10;
    int pairs_per_user = 0;  // 0 keeps every window
    uint64_t seed = 42;
};

struct TrainLogRow {
    int epoch = 0;
    int64_t step = 0;
    double loss_total = 0.0;
    double loss_item = 0.0;
    double loss_his = 0.0;
    double val_recall10 = -1.0;  // negative when not measured this epoch
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    int best_epoch = -1;
    double best_val = -1.0;
    int64_t steps = 0;
};

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

// Every-epoch loop: shuffled batches, one optimizer step per batch covering
// the item loss plus lambda-weighted history loss. Validation Recall@10 on an
// evenly spaced user subset drives early stopping; the best weights are
// restored before returning.
template <class T>
TrainResult train_predictor(MaskPredictor<T>& model, const LooSplit& split, const SidCatalog& catalog,
                            const TrainConfig& cfg) {
    std::vector<TrainPair> pairs = build_train_pairs(split, catalog, model.seq.n_max, cfg.pairs_per_user);
    if (pairs.empty()) throw std::runtime_error("train: no training pairs");

    ParamList<T> params;
    model.collect_params(params);
    AdamW<T> opt(cfg.lr, cfg.weight_decay);

    std::vector<int> val_subset;
    {
        const int n = static_cast<int>(split.users.size());
        const int want = cfg.val_users > 0 ? std::min(cfg.val_users, n) : n;
        for (int i = 0; i < want; ++i) {
            val_subset.push_back(static_cast<int>(static_cast<int64_t>(i) * n / want));
        }
    }
    DecodeConfig vcfg;
    vcfg.B = cfg.val_beam;
    vcfg.k = 10;

    std::vector<Tensor<T>> best_weights;
    TrainResult result;
    int since_best = 0;
    int64_t step = 0;

    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = make_rng(cfg.seed, {0x65706f63, static_cast<uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_item = 0.0, sum_his = 0.0;
        int64_t batches = 0;
        for (size_t start = 0; start < pairs.size(); start += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(pairs.size(), start + static_cast<size_t>(cfg.batch));
            Rng mask_rng =
                make_rng(cfg.seed, {0x6d61736b, static_cast<uint64_t>(epoch), static_cast<uint64_t>(batches)});

            std::vector<MaskedExample> item_batch, his_batch;
            item_batch.reserve(end - start);
            his_batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                const TrainPair& p = pairs[order[i]];
                item_batch.push_back(build_item_example(p, model.vocab, model.seq, mask_rng));
                his_batch.push_back(build_his_example(p, model.vocab, model.seq, mask_rng));
            }

            model.zero_grad();
            double loss_item = 0.0, loss_his = 0.0;
            try {
                loss_item = masked_nll(model, item_batch, 1.0, true);
                loss_his = masked_nll(model, his_batch, cfg.lambda_his, true);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train: " + std::string(e.what()) + " at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            }
            opt.step(params);
            sum_item += loss_item;
            sum_his += loss_his;
            ++batches;
            ++step;
        }

        TrainLogRow row;
        row.epoch = epoch;
        row.step = step;
        row.loss_item = sum_item / static_cast<double>(batches);
        row.loss_his = sum_his / static_cast<double>(batches);
        row.loss_total = row.loss_item + cfg.lambda_his * row.loss_his;

        if ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs) {
            const EvalResult val =
                evaluate_users(model, catalog, split, val_subset, /*use_test=*/false, vcfg);
            row.val_recall10 = val.recall.at(10);
            if (row.val_recall10 > result.best_val) {
                result.best_val = row.val_recall10;
                result.best_epoch = epoch;
                since_best = 0;
                best_weights.clear();
                for (const auto& pr : params) best_weights.push_back(pr.p->w);
            } else {
                ++since_best;
            }
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                          .count();
        result.log.push_back(row);

        if (cfg.patience > 0 && since_best >= cfg.patience) break;
    }

    if (!best_weights.empty()) {
        for (size_t i = 0; i < params.size(); ++i) params[i].p->w = best_weights[i];
    }
    result.steps = step;
    return result;
}

}  // namespace diffrec
