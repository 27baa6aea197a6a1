#include "diffrec/tokenizer.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "diffrec/errors.hpp"
#include "diffrec/io_util.hpp"

namespace diffrec {

void save_sids(const std::filesystem::path& path, const SidCatalog& catalog) {
    std::string out;
    for (size_t i = 0; i < catalog.item_ids.size(); ++i) {
        nlohmann::json j;
        j["item_id"] = catalog.item_ids[i];
        j["sid"] = catalog.sids[i];
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

SidCatalog load_sids(const std::filesystem::path& path, int M, int K) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open: " + path.string());

    SidCatalog catalog;
    catalog.M = M;
    catalog.K = K;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fail = [&](const std::string& msg) -> ValidationError {
            return ValidationError(path.string() + " line " + std::to_string(lineno) + ": " + msg);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw fail(std::string("invalid JSON (") + e.what() + ")");
        }
        if (!j.contains("item_id") || !j["item_id"].is_string()) throw fail("missing string field item_id");
        if (!j.contains("sid") || !j["sid"].is_array()) throw fail("missing array field sid");
        SemanticID sid = j["sid"].get<SemanticID>();
        if (static_cast<int>(sid.size()) != M) throw fail("sid length != " + std::to_string(M));
        for (int32_t c : sid) {
            if (c < 0 || c >= K) throw fail("sid code out of range [0, " + std::to_string(K) + ")");
        }
        std::string item_id = j["item_id"].get<std::string>();
        if (catalog.item_index.count(item_id)) throw fail("duplicate item_id " + item_id);
        catalog.add(std::move(item_id), std::move(sid));
    }
    return catalog;
}

}  // namespace diffrec
