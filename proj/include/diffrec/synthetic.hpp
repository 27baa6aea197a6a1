#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffrec/corpus.hpp"
#include "diffrec/rng.hpp"

namespace diffrec {

// Synthetic catalog with planted sequential structure: items live in
// clusters, each user walks a cluster-level Markov chain that moves to the
// next cluster with probability follow_prob and otherwise jumps uniformly.
// Item embeddings are their cluster center plus Gaussian noise, so both the
// tokenizer (geometry) and the predictor (transitions) have signal to find.
struct SynthConfig {
    int n_items = 1000;
    int n_users = 5000;
    int seq_len = 10;
    int n_clusters = 10;
    int embed_dim = 64;
    double noise = 0.1;
    double follow_prob = 0.7;
    uint64_t seed = 42;
};

struct SynthData {
    SynthConfig cfg;
    std::vector<Interaction> interactions;
    EmbeddingTable embeddings;
    std::vector<int> item_cluster;  // item index -> cluster

    // Planted probability that an item of cluster `from` is followed by an
    // item of cluster `to`.
    double transition_prob(int from, int to) const {
        const double base = (1.0 - cfg.follow_prob) / cfg.n_clusters;
        return to == (from + 1) % cfg.n_clusters ? cfg.follow_prob + base : base;
    }
};

std::string zero_padded_id(const std::string& prefix, int index, int count);

SynthData generate_synthetic(const SynthConfig& cfg);

}  // namespace diffrec
