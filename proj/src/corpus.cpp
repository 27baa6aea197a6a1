#include "diffrec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "diffrec/errors.hpp"
#include "diffrec/io_util.hpp"

namespace diffrec {

std::vector<Interaction> load_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open: " + path.string());

    std::vector<Interaction> rows;
    std::set<std::tuple<std::string, std::string, double>> seen;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                                  ": invalid JSON (" + e.what() + ")");
        }
        auto fail = [&](const std::string& msg) -> ValidationError {
            return ValidationError(path.string() + " line " + std::to_string(lineno) + ": " + msg);
        };
        if (!j.is_object()) throw fail("expected an object");
        if (!j.contains("user_id") || !j["user_id"].is_string()) throw fail("missing string field user_id");
        if (!j.contains("item_id") || !j["item_id"].is_string()) throw fail("missing string field item_id");
        if (!j.contains("timestamp") || !j["timestamp"].is_number()) throw fail("missing numeric field timestamp");

        Interaction r;
        r.user_id = j["user_id"].get<std::string>();
        r.item_id = j["item_id"].get<std::string>();
        r.timestamp = j["timestamp"].get<double>();
        if (r.user_id.empty()) throw fail("empty user_id");
        if (r.item_id.empty()) throw fail("empty item_id");

        if (seen.emplace(r.user_id, r.item_id, r.timestamp).second) {
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

void save_interactions(const std::filesystem::path& path, const std::vector<Interaction>& rows) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::json j;
        j["user_id"] = r.user_id;
        j["item_id"] = r.item_id;
        j["timestamp"] = r.timestamp;
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

LooSplit build_split(const std::vector<Interaction>& rows, int min_len) {
    if (min_len < 3) throw std::invalid_argument("build_split: min_len must be at least 3");

    LooSplit split;
    std::unordered_map<std::string, size_t> user_slot;
    struct Hist {
        std::string user_id;
        std::vector<std::pair<double, int32_t>> events;  // (timestamp, item index)
    };
    std::vector<Hist> hists;

    for (const auto& r : rows) {
        auto [iit, inew] = split.item_index.try_emplace(r.item_id, static_cast<int32_t>(split.item_ids.size()));
        if (inew) split.item_ids.push_back(r.item_id);

        auto [uit, unew] = user_slot.try_emplace(r.user_id, hists.size());
        if (unew) hists.push_back({r.user_id, {}});
        hists[uit->second].events.emplace_back(r.timestamp, iit->second);
    }

    for (auto& h : hists) {
        if (static_cast<int>(h.events.size()) < min_len) continue;
        std::stable_sort(h.events.begin(), h.events.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        LooSplit::User u;
        u.user_id = std::move(h.user_id);
        u.items.reserve(h.events.size());
        for (const auto& [ts, idx] : h.events) u.items.push_back(idx);
        split.users.push_back(std::move(u));
    }
    return split;
}

std::vector<int32_t> truncate_history(const std::vector<int32_t>& history, int max_history) {
    if (max_history <= 0) throw std::invalid_argument("truncate_history: max_history must be positive");
    if (static_cast<int>(history.size()) <= max_history) return history;
    return {history.end() - max_history, history.end()};
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::string out = "EMB1";
    put_u32_le(out, static_cast<uint32_t>(table.ids.size()));
    put_u32_le(out, static_cast<uint32_t>(table.dim));
    for (int32_t i = 0; i < table.count(); ++i) {
        const std::string& id = table.ids[static_cast<size_t>(i)];
        if (id.size() > 0xffff) throw std::runtime_error("embeddings: item id longer than 65535 bytes");
        put_u16_le(out, static_cast<uint16_t>(id.size()));
        out += id;
        const float* row = table.row(i);
        for (int j = 0; j < table.dim; ++j) put_f32_le(out, row[j]);
    }
    atomic_write_file(path, out);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw ValidationError(e.what());
    }
    ByteReader r(bytes, "embeddings " + path.string());
    if (r.bytes(4) != "EMB1") throw ValidationError("embeddings " + path.string() + ": bad magic");
    const uint32_t count = r.u32();
    const uint32_t dim = r.u32();
    if (dim == 0) throw std::runtime_error("embeddings " + path.string() + ": zero dimension");

    EmbeddingTable table;
    table.dim = static_cast<int>(dim);
    table.ids.reserve(count);
    table.vectors = Tensor<float>({static_cast<int64_t>(count), static_cast<int64_t>(dim)});
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = r.u16();
        std::string id = r.bytes(len);
        if (!table.index.emplace(id, static_cast<int32_t>(i)).second) {
            throw std::runtime_error("embeddings " + path.string() + ": duplicate item id " + id);
        }
        table.ids.push_back(std::move(id));
        float* row = table.vectors.ptr() + static_cast<int64_t>(i) * dim;
        for (uint32_t j = 0; j < dim; ++j) row[j] = r.f32();
    }
    return table;
}

void require_embeddings(const LooSplit& split, const EmbeddingTable& table) {
    for (const auto& id : split.item_ids) {
        if (!table.index.count(id)) {
            throw std::runtime_error("no embedding for item " + id);
        }
    }
}

}  // namespace diffrec
