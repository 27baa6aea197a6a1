#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "diffrec/corpus.hpp"
#include "diffrec/decoder.hpp"
#include "diffrec/tokenizer.hpp"

namespace diffrec {

// Ranked semantic ids expand to ranked items: each id contributes the items
// that carry it in ascending item_id order, duplicates already ranked are
// skipped, and ids matching no item are counted as invalid.
inline std::vector<int32_t> sids_to_items(const std::vector<DecodeHypothesis>& hyps,
                                          const SidCatalog& catalog, int* invalid_count) {
    std::vector<int32_t> ranked;
    std::unordered_set<int32_t> seen;
    int invalid = 0;
    for (const auto& h : hyps) {
        const std::vector<int32_t>* items = catalog.items_with(h.sid);
        if (!items) {
            ++invalid;
            continue;
        }
        std::vector<int32_t> group = *items;
        std::sort(group.begin(), group.end(), [&](int32_t a, int32_t b) {
            return catalog.item_ids[static_cast<size_t>(a)] < catalog.item_ids[static_cast<size_t>(b)];
        });
        for (int32_t item : group) {
            if (seen.insert(item).second) ranked.push_back(item);
        }
    }
    if (invalid_count) *invalid_count = invalid;
    return ranked;
}

// 1-based rank of target in the list; 0 when absent.
inline int rank_of(const std::vector<int32_t>& ranked, int32_t target) {
    for (size_t i = 0; i < ranked.size(); ++i) {
        if (ranked[i] == target) return static_cast<int>(i) + 1;
    }
    return 0;
}

struct EvalResult {
    int users = 0;
    double invalid_rate = 0.0;  // invalid hypotheses / all hypotheses
    int shortfall = 0;          // users with fewer distinct hypotheses than requested
    std::map<int, double> recall;  // k -> Recall@k
    std::map<int, double> ndcg;    // k -> NDCG@k
};

struct GenerationRow {
    std::string user_id;
    int rank = 0;  // 1-based
    SemanticID sid;
    double logprob = 0.0;
};

inline const std::vector<int>& default_recall_ks() {
    static const std::vector<int> ks{1, 5, 10};
    return ks;
}
inline const std::vector<int>& default_ndcg_ks() {
    static const std::vector<int> ks{5, 10};
    return ks;
}

// Leave-one-out evaluation. Histories come from the split (validation:
// everything before the held-out pair; test: everything before the last
// item); each user's block is decoded and the target's rank scored with
// Recall@k and NDCG@k = 1 / log2(rank + 1).
template <class T>
EvalResult evaluate_users(const MaskPredictor<T>& model, const SidCatalog& catalog, const LooSplit& split,
                          const std::vector<int>& user_subset, bool use_test, const DecodeConfig& dcfg,
                          int threads = 1, std::vector<GenerationRow>* generations = nullptr) {
    std::vector<int32_t> split_to_cat(split.item_ids.size());
    for (size_t i = 0; i < split.item_ids.size(); ++i) {
        auto it = catalog.item_index.find(split.item_ids[i]);
        if (it == catalog.item_index.end()) {
            throw std::runtime_error("no semantic id for item " + split.item_ids[i]);
        }
        split_to_cat[i] = it->second;
    }

    struct UserOut {
        int rank = 0;
        int invalid = 0;
        int hyps = 0;
        bool shortfall = false;
        std::vector<DecodeHypothesis> gen;
    };
    std::vector<UserOut> per_user(user_subset.size());

    model.prewarm_masks();
    auto run_range = [&](size_t begin, size_t end) {
        for (size_t ui = begin; ui < end; ++ui) {
            const LooSplit::User& u = split.users[static_cast<size_t>(user_subset[ui])];
            std::vector<int32_t> hist_items = use_test ? LooSplit::test_history(u) : LooSplit::val_history(u);
            hist_items = truncate_history(hist_items, model.seq.n_max);
            std::vector<SemanticID> history;
            history.reserve(hist_items.size());
            for (int32_t item : hist_items) {
                history.push_back(catalog.sid_of(split_to_cat[static_cast<size_t>(item)]));
            }
            PredictorBlockModel<T> bm(model, std::move(history));
            DecodeResult res = decode(bm, dcfg);

            UserOut& out = per_user[ui];
            out.hyps = static_cast<int>(res.hyps.size());
            out.shortfall = res.shortfall;
            std::vector<int32_t> ranked = sids_to_items(res.hyps, catalog, &out.invalid);
            const int32_t target =
                split_to_cat[static_cast<size_t>(use_test ? LooSplit::test_target(u) : LooSplit::val_target(u))];
            out.rank = rank_of(ranked, target);
            if (generations) out.gen = std::move(res.hyps);
        }
    };

    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(user_subset.size())));
    if (nthreads <= 1) {
        run_range(0, user_subset.size());
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (user_subset.size() + nthreads - 1) / static_cast<size_t>(nthreads);
        for (int t = 0; t < nthreads; ++t) {
            const size_t begin = static_cast<size_t>(t) * chunk;
            const size_t end = std::min(user_subset.size(), begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(run_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    EvalResult result;
    result.users = static_cast<int>(user_subset.size());
    int64_t total_hyps = 0, total_invalid = 0;
    for (int k : default_recall_ks()) result.recall[k] = 0.0;
    for (int k : default_ndcg_ks()) result.ndcg[k] = 0.0;
    for (size_t ui = 0; ui < per_user.size(); ++ui) {
        const UserOut& out = per_user[ui];
        total_hyps += out.hyps;
        total_invalid += out.invalid;
        if (out.shortfall) ++result.shortfall;
        if (out.rank > 0) {
            for (int k : default_recall_ks()) {
                if (out.rank <= k) result.recall[k] += 1.0;
            }
            for (int k : default_ndcg_ks()) {
                if (out.rank <= k) result.ndcg[k] += 1.0 / std::log2(static_cast<double>(out.rank) + 1.0);
            }
        }
        if (generations) {
            const LooSplit::User& u = split.users[static_cast<size_t>(user_subset[ui])];
            for (size_t r = 0; r < out.gen.size(); ++r) {
                GenerationRow row;
                row.user_id = u.user_id;
                row.rank = static_cast<int>(r) + 1;
                row.sid = out.gen[r].sid;
                row.logprob = out.gen[r].logprob;
                generations->push_back(std::move(row));
            }
        }
    }
    if (result.users > 0) {
        for (auto& [k, v] : result.recall) v /= result.users;
        for (auto& [k, v] : result.ndcg) v /= result.users;
    }
    if (total_hyps > 0) {
        result.invalid_rate = static_cast<double>(total_invalid) / static_cast<double>(total_hyps);
    }
    return result;
}

struct ResultRow {
    std::string dataset;
    std::string model;
    std::string order;
    int T = 0;
    int B = 0;
    double recall1 = 0.0, recall5 = 0.0, recall10 = 0.0;
    double ndcg5 = 0.0, ndcg10 = 0.0;
    double invalid_rate = 0.0;
    int users = 0;
};

inline ResultRow make_result_row(const std::string& dataset, const std::string& model_name,
                                 const DecodeConfig& dcfg, const EvalResult& e) {
    ResultRow r;
    r.dataset = dataset;
    r.model = model_name;
    r.order = to_string(dcfg.order);
    r.T = dcfg.T;
    r.B = dcfg.beam_width();
    r.recall1 = e.recall.at(1);
    r.recall5 = e.recall.at(5);
    r.recall10 = e.recall.at(10);
    r.ndcg5 = e.ndcg.at(5);
    r.ndcg10 = e.ndcg.at(10);
    r.invalid_rate = e.invalid_rate;
    r.users = e.users;
    return r;
}

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
void write_generations(const std::filesystem::path& path, const std::vector<GenerationRow>& rows);

}  // namespace diffrec
