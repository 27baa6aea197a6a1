#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffrec/predictor.hpp"
#include "diffrec/tensor.hpp"
#include "diffrec/vocab.hpp"

namespace diffrec {

enum class DecodeOrder { adaptive, left_to_right, right_to_left };

inline const char* to_string(DecodeOrder o) {
    switch (o) {
        case DecodeOrder::adaptive: return "adaptive";
        case DecodeOrder::left_to_right: return "left2right";
        case DecodeOrder::right_to_left: return "right2left";
    }
    return "?";
}

inline DecodeOrder decode_order_from_string(const std::string& s) {
    if (s == "adaptive") return DecodeOrder::adaptive;
    if (s == "left2right" || s == "l2r") return DecodeOrder::left_to_right;
    if (s == "right2left" || s == "r2l") return DecodeOrder::right_to_left;
    throw std::invalid_argument("unknown decode order: " + s);
}

enum class DecodeMode { beam, greedy };

inline const char* to_string(DecodeMode m) {
    return m == DecodeMode::greedy ? "greedy" : "beam";
}

inline DecodeMode decode_mode_from_string(const std::string& s) {
    if (s == "beam") return DecodeMode::beam;
    if (s == "greedy") return DecodeMode::greedy;
    throw std::invalid_argument("unknown decode mode: " + s);
}

struct DecodeConfig {
    int T = 0;  // diffusion steps; 0 means one position per step (T = M)
    int B = 10;
    int k = 10;
    DecodeOrder order = DecodeOrder::adaptive;
    DecodeMode mode = DecodeMode::beam;  // greedy pins the beam width to 1
    // true: re-run the predictor after every committed position; false: keep
    // the step-start distributions for the whole step
    bool repredict_per_commit = true;

    int beam_width() const { return mode == DecodeMode::greedy ? 1 : B; }
};

inline constexpr int32_t kUnfilledCode = -1;

// Produces per-position distributions for partially filled next-item blocks.
// A block is M entries, each a code in [0, K) or kUnfilledCode. predict()
// returns one [M x K] row-stochastic tensor per block.
class BlockModel {
  public:
    virtual ~BlockModel() = default;
    virtual int M() const = 0;
    virtual int K() const = 0;
    virtual std::vector<Tensor<double>> predict(const std::vector<std::vector<int32_t>>& blocks) = 0;
};

struct Beam {
    std::vector<int32_t> block;
    double logprob = 0.0;
    std::vector<int> schedule;  // positions still to fill in the current step
    Tensor<double> dist;        // step-start distributions (kept when not re-predicting)
};

struct DecodeHypothesis {
    SemanticID sid;
    double logprob = 0.0;
};

struct DecodeResult {
    std::vector<DecodeHypothesis> hyps;  // logprob descending, ties by block ascending
    bool shortfall = false;              // fewer distinct blocks than requested
};

// Chooses `count` unfilled positions and the order to fill them in.
// adaptive: by descending max-probability confidence, ties to the lower
// index. left_to_right: ascending index. right_to_left: descending index.
inline std::vector<int> select_positions(const Tensor<double>& dist, const std::vector<int32_t>& block,
                                         int count, DecodeOrder order) {
    std::vector<int> unfilled;
    for (int m = 0; m < static_cast<int>(block.size()); ++m) {
        if (block[static_cast<size_t>(m)] == kUnfilledCode) unfilled.push_back(m);
    }
    if (count > static_cast<int>(unfilled.size())) {
        throw std::invalid_argument("select_positions: not enough unfilled positions");
    }
    switch (order) {
        case DecodeOrder::left_to_right:
            unfilled.resize(static_cast<size_t>(count));
            return unfilled;
        case DecodeOrder::right_to_left: {
            std::reverse(unfilled.begin(), unfilled.end());
            unfilled.resize(static_cast<size_t>(count));
            return unfilled;
        }
        case DecodeOrder::adaptive: {
            const int K = static_cast<int>(dist.shape[1]);
            std::vector<std::pair<double, int>> scored;
            scored.reserve(unfilled.size());
            for (int m : unfilled) {
                double conf = 0.0;
                const double* row = dist.ptr() + static_cast<int64_t>(m) * K;
                for (int c = 0; c < K; ++c) conf = std::max(conf, row[c]);
                scored.emplace_back(conf, m);
            }
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            std::vector<int> out;
            out.reserve(static_cast<size_t>(count));
            for (int i = 0; i < count; ++i) out.push_back(scored[static_cast<size_t>(i)].second);
            return out;
        }
    }
    throw std::logic_error("select_positions: bad order");
}

namespace detail {

struct Candidate {
    Beam beam;
    int32_t token_id = 0;  // head * K + code of the newly committed entry
    int parent = 0;
};

inline std::vector<Beam> prune_top_b(std::vector<Candidate>& cands, int B) {
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.beam.logprob != b.beam.logprob) return a.beam.logprob > b.beam.logprob;
        if (a.token_id != b.token_id) return a.token_id < b.token_id;
        return a.parent < b.parent;
    });
    if (static_cast<int>(cands.size()) > B) cands.resize(static_cast<size_t>(B));
    std::vector<Beam> out;
    out.reserve(cands.size());
    for (auto& c : cands) out.push_back(std::move(c.beam));
    return out;
}

inline double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

// Each beam commits one position (per-beam choice), every code of that
// position's head becomes a candidate, and the pool is pruned to the best B.
inline std::vector<Beam> expand_each(const std::vector<Beam>& beams, const std::vector<int>& positions,
                                     const std::vector<const Tensor<double>*>& dists, int B, int K) {
    std::vector<Candidate> cands;
    cands.reserve(beams.size() * static_cast<size_t>(K));
    for (size_t b = 0; b < beams.size(); ++b) {
        const int pos = positions[b];
        if (beams[b].block[static_cast<size_t>(pos)] != kUnfilledCode) {
            throw std::invalid_argument("expand: position already filled");
        }
        const double* row = dists[b]->ptr() + static_cast<int64_t>(pos) * K;
        for (int32_t c = 0; c < K; ++c) {
            Candidate cand;
            cand.beam = beams[b];
            cand.beam.block[static_cast<size_t>(pos)] = c;
            cand.beam.logprob += safe_log(row[c]);
            cand.token_id = static_cast<int32_t>(pos) * K + c;
            cand.parent = static_cast<int>(b);
            cands.push_back(std::move(cand));
        }
    }
    return prune_top_b(cands, B);
}

}  // namespace detail

// Expands every beam at one shared position and keeps the top B results.
inline std::vector<Beam> expand_position(const std::vector<Beam>& beams, int position, int B,
                                         const std::vector<const Tensor<double>*>& dists, int K) {
    std::vector<int> positions(beams.size(), position);
    return detail::expand_each(beams, positions, dists, B, K);
}

// Adaptive-order beam decoding of one next-item block. T steps each select
// M/T positions per beam, which are then committed one at a time; the
// predictor is re-run after each commitment unless the config keeps the
// step-start distributions.
inline DecodeResult decode(BlockModel& model, const DecodeConfig& cfg) {
    const int M = model.M();
    const int K = model.K();
    const int T = cfg.T == 0 ? M : cfg.T;
    if (T < 1 || T > M || M % T != 0) {
        throw std::invalid_argument("decode: steps must divide the block size");
    }
    const int B = cfg.beam_width();
    if (B < 1) throw std::invalid_argument("decode: beam width must be positive");
    if (cfg.k < 1) throw std::invalid_argument("decode: result count must be positive");
    const int per_step = M / T;

    std::vector<Beam> beams(1);
    beams[0].block.assign(static_cast<size_t>(M), kUnfilledCode);

    auto predict_all = [&](std::vector<Beam>& bs) {
        std::vector<std::vector<int32_t>> blocks;
        blocks.reserve(bs.size());
        for (const Beam& b : bs) blocks.push_back(b.block);
        std::vector<Tensor<double>> dists = model.predict(blocks);
        for (size_t i = 0; i < bs.size(); ++i) bs[i].dist = std::move(dists[i]);
    };

    for (int step = 0; step < T; ++step) {
        predict_all(beams);
        for (Beam& b : beams) {
            b.schedule = select_positions(b.dist, b.block, per_step, cfg.order);
        }
        for (int sub = 0; sub < per_step; ++sub) {
            if (sub > 0 && cfg.repredict_per_commit) predict_all(beams);
            std::vector<int> positions;
            std::vector<const Tensor<double>*> dists;
            positions.reserve(beams.size());
            dists.reserve(beams.size());
            for (Beam& b : beams) {
                positions.push_back(b.schedule.front());
                b.schedule.erase(b.schedule.begin());
                dists.push_back(&b.dist);
            }
            beams = detail::expand_each(beams, positions, dists, B, K);
        }
    }

    // identical blocks keep their best score
    std::map<std::vector<int32_t>, double> best;
    for (const Beam& b : beams) {
        auto [it, inserted] = best.emplace(b.block, b.logprob);
        if (!inserted && b.logprob > it->second) it->second = b.logprob;
    }
    std::vector<DecodeHypothesis> hyps;
    hyps.reserve(best.size());
    for (const auto& [block, lp] : best) {
        DecodeHypothesis h;
        h.sid = block;
        h.logprob = lp;
        hyps.push_back(std::move(h));
    }
    std::sort(hyps.begin(), hyps.end(), [](const DecodeHypothesis& a, const DecodeHypothesis& b) {
        if (a.logprob != b.logprob) return a.logprob > b.logprob;
        return a.sid < b.sid;
    });

    DecodeResult out;
    out.shortfall = static_cast<int>(hyps.size()) < cfg.k;
    if (static_cast<int>(hyps.size()) > cfg.k) hyps.resize(static_cast<size_t>(cfg.k));
    out.hyps = std::move(hyps);
    return out;
}

// BlockModel over a trained mask predictor and one user's history.
template <class T>
class PredictorBlockModel : public BlockModel {
  public:
    PredictorBlockModel(const MaskPredictor<T>& model, std::vector<SemanticID> history)
        : model_(model), history_(std::move(history)) {
        if (static_cast<int>(history_.size()) > model_.seq.n_max) {
            history_.erase(history_.begin(),
                           history_.end() - model_.seq.n_max);
        }
    }

    int M() const override { return model_.seq.M; }
    int K() const override { return model_.vocab.K; }

    std::vector<Tensor<double>> predict(const std::vector<std::vector<int32_t>>& blocks) override {
        const VocabLayout& vocab = model_.vocab;
        const SequenceLayout& seq = model_.seq;
        std::vector<AssembledInput> batch;
        batch.reserve(blocks.size());
        for (const auto& block : blocks) {
            std::vector<int32_t> next(static_cast<size_t>(seq.M));
            for (int m = 0; m < seq.M; ++m) {
                const int32_t code = block[static_cast<size_t>(m)];
                next[static_cast<size_t>(m)] =
                    code == kUnfilledCode ? vocab.mask_token() : vocab.token_of(m, code);
            }
            batch.push_back(assemble_input(history_, next, vocab, seq));
        }
        Tensor<T> logits = model_.forward(batch, nullptr);

        std::vector<Tensor<double>> out;
        out.reserve(blocks.size());
        const int L = seq.length();
        const int V = vocab.vocab_size();
        for (size_t b = 0; b < blocks.size(); ++b) {
            Tensor<double> dist({seq.M, vocab.K});
            for (int m = 0; m < seq.M; ++m) {
                const int pos = seq.block_begin() + m;
                const T* row = logits.ptr() + (static_cast<int64_t>(b) * L + pos) * V;
                const int lo = m * vocab.K;
                double mx = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < vocab.K; ++c) mx = std::max(mx, static_cast<double>(row[lo + c]));
                double denom = 0.0;
                double* drow = dist.ptr() + static_cast<int64_t>(m) * vocab.K;
                for (int c = 0; c < vocab.K; ++c) {
                    drow[c] = std::exp(static_cast<double>(row[lo + c]) - mx);
                    denom += drow[c];
                }
                for (int c = 0; c < vocab.K; ++c) drow[c] /= denom;
            }
            out.push_back(std::move(dist));
        }
        return out;
    }

  private:
    const MaskPredictor<T>& model_;
    std::vector<SemanticID> history_;
};

}  // namespace diffrec
