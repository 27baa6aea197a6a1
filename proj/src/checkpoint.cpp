#include "diffrec/checkpoint.hpp"

#include <stdexcept>

#include "diffrec/io_util.hpp"
#include "diffrec/version.hpp"

namespace diffrec {

const Tensor<float>& Checkpoint::require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    return it->second;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors,
                     const nlohmann::json& config) {
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config"] = config;
    manifest["tensors"] = nlohmann::json::array();

    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t->shape;
        entry["offset"] = offset;
        manifest["tensors"].push_back(entry);
        offset += t->size() * sizeof(float);
    }

    const std::string mjson = manifest.dump();
    std::string out;
    out.reserve(8 + mjson.size() + offset);
    out += "DRW1";
    put_u32_le(out, static_cast<uint32_t>(mjson.size()));
    out += mjson;
    for (const auto& [name, t] : tensors) {
        for (int64_t i = 0; i < t->size(); ++i) put_f32_le(out, t->data[static_cast<size_t>(i)]);
    }
    atomic_write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    ByteReader r(bytes, "checkpoint " + path.string());
    if (r.bytes(4) != "DRW1") throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    const uint32_t mlen = r.u32();
    nlohmann::json manifest = nlohmann::json::parse(r.bytes(mlen));

    Checkpoint ck;
    ck.version = manifest.value("version", "");
    ck.config = manifest.value("config", nlohmann::json::object());
    const size_t data_begin = r.pos;
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
        const uint64_t offset = entry.at("offset").get<uint64_t>();
        Tensor<float> t(shape);
        r.pos = data_begin + offset;
        for (int64_t i = 0; i < t.size(); ++i) t.data[static_cast<size_t>(i)] = r.f32();
        ck.tensors.emplace(name, std::move(t));
    }
    return ck;
}

}  // namespace diffrec
