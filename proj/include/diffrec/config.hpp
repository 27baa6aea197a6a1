#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffrec/decoder.hpp"
#include "diffrec/errors.hpp"
#include "diffrec/predictor.hpp"
#include "diffrec/synthetic.hpp"
#include "diffrec/tokenizer.hpp"
#include "diffrec/trainer.hpp"

namespace diffrec {

struct PathsConfig {
    std::string interactions;  // empty: <workdir>/interactions.jsonl
    std::string embeddings;    // empty: <workdir>/embeddings.emb
    std::string workdir = "run";
};

struct CorpusConfig {
    int min_len = 3;
    int max_history = 20;  // items of history the predictor sees
};

struct RunConfig {
    uint64_t seed = 42;
    int threads = 1;
    std::string dataset = "synthetic";
    PathsConfig paths;
    SynthConfig synth;
    CorpusConfig corpus;
    TokenizerConfig tokenizer;
    PredictorConfig predictor;
    TrainConfig train;
    DecodeConfig decode;

    // Shared knobs (seed, code geometry, history length) flow from the
    // top-level fields into the per-stage configs here.
    void finalize();

    PredictorConfig predictor_config() const;

    std::filesystem::path workdir() const { return paths.workdir; }
    std::filesystem::path interactions_path() const {
        return paths.interactions.empty() ? workdir() / "interactions.jsonl"
                                          : std::filesystem::path(paths.interactions);
    }
    std::filesystem::path embeddings_path() const {
        return paths.embeddings.empty() ? workdir() / "embeddings.emb"
                                        : std::filesystem::path(paths.embeddings);
    }
    std::filesystem::path tokenizer_ckpt() const { return workdir() / "tokenizer.ckpt"; }
    std::filesystem::path tokenizer_log() const { return workdir() / "tokenizer_log.csv"; }
    std::filesystem::path sids_path() const { return workdir() / "sids.jsonl"; }
    std::filesystem::path predictor_ckpt() const { return workdir() / "predictor.ckpt"; }
    std::filesystem::path train_log() const { return workdir() / "train_log.csv"; }
    std::filesystem::path results_path() const { return workdir() / "results.csv"; }
    std::filesystem::path generations_path() const { return workdir() / "generations.jsonl"; }
    std::filesystem::path ablation_path() const { return workdir() / "ablation.csv"; }
    std::filesystem::path manifest_path() const { return workdir() / "manifest.json"; }
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json tokenizer_config_to_json(const TokenizerConfig& cfg);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);
nlohmann::json predictor_config_to_json(const PredictorConfig& cfg);
PredictorConfig predictor_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);

// "a.b.c=value"; the value is parsed as JSON when possible, otherwise taken
// as a string. Unknown keys are rejected.
void apply_override(nlohmann::json& j, const std::string& assignment);

std::string config_hash_hex(const RunConfig& cfg);

}  // namespace diffrec
