#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffrec/nn.hpp"
#include "diffrec/tensor.hpp"

namespace diffrec {

// Checkpoint container: "DRW1" magic, u32 little-endian manifest length, a
// UTF-8 JSON manifest ({version, config, tensors:[{name, shape, offset}]}),
// then all tensor payloads as raw little-endian float32. Offsets are byte
// offsets into the data region that follows the manifest.
struct Checkpoint {
    nlohmann::json config;
    std::string version;
    std::map<std::string, Tensor<float>> tensors;

    const Tensor<float>& require(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors,
                     const nlohmann::json& config);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes a model's collected parameters; any type exposing
// collect_params(ParamList<float>&) fits.
template <class Model>
void save_model(const std::filesystem::path& path, Model& model, const nlohmann::json& config) {
    ParamList<float> list;
    model.collect_params(list);
    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    tensors.reserve(list.size());
    for (const auto& pr : list) tensors.emplace_back(pr.name, &pr.p->w);
    save_checkpoint(path, tensors, config);
}

template <class Model>
void load_model(const Checkpoint& ck, Model& model) {
    ParamList<float> list;
    model.collect_params(list);
    for (auto& pr : list) {
        const Tensor<float>& t = ck.require(pr.name);
        if (t.shape != pr.p->w.shape) {
            throw std::runtime_error("checkpoint: shape mismatch for " + pr.name);
        }
        pr.p->w = t;
    }
}

}  // namespace diffrec
