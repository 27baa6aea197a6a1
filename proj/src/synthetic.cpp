#include "diffrec/synthetic.hpp"

#include <random>
#include <stdexcept>

namespace diffrec {

std::string zero_padded_id(const std::string& prefix, int index, int count) {
    int width = 1;
    for (int v = count - 1; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(index);
    if (static_cast<int>(digits.size()) < width) {
        digits.insert(0, static_cast<size_t>(width) - digits.size(), '0');
    }
    return prefix + digits;
}

SynthData generate_synthetic(const SynthConfig& cfg) {
    if (cfg.n_items <= 0 || cfg.n_users <= 0 || cfg.seq_len < 3) {
        throw std::invalid_argument("synthetic: need n_items > 0, n_users > 0, seq_len >= 3");
    }
    if (cfg.n_clusters <= 0 || cfg.n_clusters > cfg.n_items) {
        throw std::invalid_argument("synthetic: n_clusters must be in [1, n_items]");
    }
    if (cfg.follow_prob < 0.0 || cfg.follow_prob > 1.0) {
        throw std::invalid_argument("synthetic: follow_prob must be in [0, 1]");
    }

    SynthData out;
    out.cfg = cfg;

    Rng rng = make_rng(cfg.seed, {0x73796e74});
    std::normal_distribution<double> gauss(0.0, 1.0);

    Tensor<float> centers({cfg.n_clusters, cfg.embed_dim});
    for (auto& v : centers.data) v = static_cast<float>(gauss(rng));

    out.item_cluster.resize(static_cast<size_t>(cfg.n_items));
    out.embeddings.dim = cfg.embed_dim;
    out.embeddings.vectors = Tensor<float>({cfg.n_items, cfg.embed_dim});
    std::vector<std::vector<int>> cluster_items(static_cast<size_t>(cfg.n_clusters));
    for (int i = 0; i < cfg.n_items; ++i) {
        const int c = i % cfg.n_clusters;
        out.item_cluster[static_cast<size_t>(i)] = c;
        cluster_items[static_cast<size_t>(c)].push_back(i);
        const float* center = centers.ptr() + static_cast<int64_t>(c) * cfg.embed_dim;
        float* row = out.embeddings.vectors.ptr() + static_cast<int64_t>(i) * cfg.embed_dim;
        for (int j = 0; j < cfg.embed_dim; ++j) {
            row[j] = center[j] + static_cast<float>(cfg.noise * gauss(rng));
        }
        std::string id = zero_padded_id("item_", i, cfg.n_items);
        out.embeddings.index.emplace(id, i);
        out.embeddings.ids.push_back(std::move(id));
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any_cluster(0, cfg.n_clusters - 1);
    std::uniform_int_distribution<int> any_item(0, cfg.n_items - 1);
    out.interactions.reserve(static_cast<size_t>(cfg.n_users) * cfg.seq_len);
    const double base_ts = 1600000000.0;
    for (int u = 0; u < cfg.n_users; ++u) {
        const std::string user_id = zero_padded_id("user_", u, cfg.n_users);
        int item = any_item(rng);
        for (int j = 0; j < cfg.seq_len; ++j) {
            if (j > 0) {
                int c = out.item_cluster[static_cast<size_t>(item)];
                c = unit(rng) < cfg.follow_prob ? (c + 1) % cfg.n_clusters : any_cluster(rng);
                const auto& pool = cluster_items[static_cast<size_t>(c)];
                item = pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
            }
            Interaction r;
            r.user_id = user_id;
            r.item_id = out.embeddings.ids[static_cast<size_t>(item)];
            r.timestamp = base_ts + j;
            out.interactions.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace diffrec
