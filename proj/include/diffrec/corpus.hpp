#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffrec/tensor.hpp"

namespace diffrec {

struct Interaction {
    std::string user_id;
    std::string item_id;
    double timestamp = 0.0;
};

// Exact duplicate (user, item, timestamp) rows are dropped, keeping the first.
// Malformed lines raise with a 1-based line number.
std::vector<Interaction> load_interactions(const std::filesystem::path& path);

void save_interactions(const std::filesystem::path& path, const std::vector<Interaction>& rows);

// Leave-one-out split over time-ordered user histories. For a user with
// items [a, b, c, d]: training sequence [a, b], validation target c with
// history [a, b], test target d with history [a, b, c].
struct LooSplit {
    struct User {
        std::string user_id;
        std::vector<int32_t> items;  // time-ordered item indices, size >= min_len
    };

    std::vector<User> users;           // first-appearance order
    std::vector<std::string> item_ids; // item index -> id, first-appearance order
    std::unordered_map<std::string, int32_t> item_index;

    static std::vector<int32_t> train_items(const User& u) {
        return {u.items.begin(), u.items.end() - 2};
    }
    static std::vector<int32_t> val_history(const User& u) {
        return {u.items.begin(), u.items.end() - 2};
    }
    static int32_t val_target(const User& u) { return u.items[u.items.size() - 2]; }
    static std::vector<int32_t> test_history(const User& u) {
        return {u.items.begin(), u.items.end() - 1};
    }
    static int32_t test_target(const User& u) { return u.items.back(); }
};

// Groups by user (users kept in first-appearance order), sorts each history by
// timestamp with a stable sort so same-timestamp rows keep file order, and
// drops users with fewer than min_len interactions.
LooSplit build_split(const std::vector<Interaction>& rows, int min_len = 3);

// Keeps at most the last max_history entries.
std::vector<int32_t> truncate_history(const std::vector<int32_t>& history, int max_history);

struct EmbeddingTable {
    int dim = 0;
    std::vector<std::string> ids;
    Tensor<float> vectors;  // [n x dim]
    std::unordered_map<std::string, int32_t> index;

    int32_t count() const { return static_cast<int32_t>(ids.size()); }
    const float* row(int32_t i) const { return vectors.ptr() + static_cast<int64_t>(i) * dim; }
};

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

// Every item appearing in the split must have an embedding row.
void require_embeddings(const LooSplit& split, const EmbeddingTable& table);

}  // namespace diffrec
