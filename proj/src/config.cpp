#include "diffrec/config.hpp"

#include <sstream>

#include "diffrec/io_util.hpp"

namespace diffrec {

namespace {

// Pulls a field out of j, type-checked, leaving the default in place when the
// key is absent.
template <class T>
void get_field(const nlohmann::json& j, const char* key, T& out, const std::string& scope) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("config: bad value for " + scope + key);
    }
}

void check_known_keys(const nlohmann::json& user, const nlohmann::json& schema, const std::string& scope) {
    if (!user.is_object()) throw ValidationError("config: expected an object at " + scope);
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!schema.contains(it.key())) {
            throw ValidationError("config: unknown key " + scope + it.key());
        }
        if (schema.at(it.key()).is_object()) {
            check_known_keys(it.value(), schema.at(it.key()), scope + it.key() + ".");
        }
    }
}

}  // namespace

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["dataset"] = cfg.dataset;
    j["paths"] = {{"interactions", cfg.paths.interactions},
                  {"embeddings", cfg.paths.embeddings},
                  {"workdir", cfg.paths.workdir}};
    j["synth"] = {{"n_items", cfg.synth.n_items},     {"n_users", cfg.synth.n_users},
                  {"seq_len", cfg.synth.seq_len},     {"n_clusters", cfg.synth.n_clusters},
                  {"embed_dim", cfg.synth.embed_dim}, {"noise", cfg.synth.noise},
                  {"follow_prob", cfg.synth.follow_prob}};
    j["corpus"] = {{"min_len", cfg.corpus.min_len}, {"max_history", cfg.corpus.max_history}};
    j["tokenizer"] = {{"M", cfg.tokenizer.M},
                      {"K", cfg.tokenizer.K},
                      {"sub_dim", cfg.tokenizer.sub_dim},
                      {"hidden", cfg.tokenizer.hidden},
                      {"alpha", cfg.tokenizer.alpha},
                      {"epochs", cfg.tokenizer.epochs},
                      {"lr", cfg.tokenizer.lr},
                      {"weight_decay", cfg.tokenizer.weight_decay},
                      {"batch", cfg.tokenizer.batch},
                      {"revive_every", cfg.tokenizer.revive_every}};
    j["predictor"] = {{"layers", cfg.predictor.layers},
                      {"d_model", cfg.predictor.d_model},
                      {"heads", cfg.predictor.heads},
                      {"d_ff", cfg.predictor.d_ff},
                      {"pattern", to_string(cfg.predictor.pattern)},
                      {"dropout", cfg.predictor.dropout}};
    j["train"] = {{"lambda_his", cfg.train.lambda_his},
                  {"epochs", cfg.train.epochs},
                  {"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"batch", cfg.train.batch},
                  {"patience", cfg.train.patience},
                  {"val_every", cfg.train.val_every},
                  {"val_users", cfg.train.val_users},
                  {"val_beam", cfg.train.val_beam},
                  {"pairs_per_user", cfg.train.pairs_per_user}};
    j["decode"] = {{"T", cfg.decode.T},
                   {"B", cfg.decode.B},
                   {"k", cfg.decode.k},
                   {"order", to_string(cfg.decode.order)},
                   {"mode", to_string(cfg.decode.mode)},
                   {"repredict_per_commit", cfg.decode.repredict_per_commit}};
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    check_known_keys(j, run_config_to_json(cfg), "");

    get_field(j, "seed", cfg.seed, "");
    get_field(j, "threads", cfg.threads, "");
    get_field(j, "dataset", cfg.dataset, "");
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        get_field(p, "interactions", cfg.paths.interactions, "paths.");
        get_field(p, "embeddings", cfg.paths.embeddings, "paths.");
        get_field(p, "workdir", cfg.paths.workdir, "paths.");
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        get_field(s, "n_items", cfg.synth.n_items, "synth.");
        get_field(s, "n_users", cfg.synth.n_users, "synth.");
        get_field(s, "seq_len", cfg.synth.seq_len, "synth.");
        get_field(s, "n_clusters", cfg.synth.n_clusters, "synth.");
        get_field(s, "embed_dim", cfg.synth.embed_dim, "synth.");
        get_field(s, "noise", cfg.synth.noise, "synth.");
        get_field(s, "follow_prob", cfg.synth.follow_prob, "synth.");
    }
    if (j.contains("corpus")) {
        const auto& c = j.at("corpus");
        get_field(c, "min_len", cfg.corpus.min_len, "corpus.");
        get_field(c, "max_history", cfg.corpus.max_history, "corpus.");
    }
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        get_field(t, "M", cfg.tokenizer.M, "tokenizer.");
        get_field(t, "K", cfg.tokenizer.K, "tokenizer.");
        get_field(t, "sub_dim", cfg.tokenizer.sub_dim, "tokenizer.");
        get_field(t, "hidden", cfg.tokenizer.hidden, "tokenizer.");
        get_field(t, "alpha", cfg.tokenizer.alpha, "tokenizer.");
        get_field(t, "epochs", cfg.tokenizer.epochs, "tokenizer.");
        get_field(t, "lr", cfg.tokenizer.lr, "tokenizer.");
        get_field(t, "weight_decay", cfg.tokenizer.weight_decay, "tokenizer.");
        get_field(t, "batch", cfg.tokenizer.batch, "tokenizer.");
        get_field(t, "revive_every", cfg.tokenizer.revive_every, "tokenizer.");
    }
    if (j.contains("predictor")) {
        const auto& p = j.at("predictor");
        get_field(p, "layers", cfg.predictor.layers, "predictor.");
        get_field(p, "d_model", cfg.predictor.d_model, "predictor.");
        get_field(p, "heads", cfg.predictor.heads, "predictor.");
        get_field(p, "d_ff", cfg.predictor.d_ff, "predictor.");
        get_field(p, "dropout", cfg.predictor.dropout, "predictor.");
        if (p.contains("pattern")) {
            std::string s;
            get_field(p, "pattern", s, "predictor.");
            try {
                cfg.predictor.pattern = attention_pattern_from_string(s);
            } catch (const std::invalid_argument& e) {
                throw ValidationError(std::string("config: ") + e.what());
            }
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        get_field(t, "lambda_his", cfg.train.lambda_his, "train.");
        get_field(t, "epochs", cfg.train.epochs, "train.");
        get_field(t, "lr", cfg.train.lr, "train.");
        get_field(t, "weight_decay", cfg.train.weight_decay, "train.");
        get_field(t, "batch", cfg.train.batch, "train.");
        get_field(t, "patience", cfg.train.patience, "train.");
        get_field(t, "val_every", cfg.train.val_every, "train.");
        get_field(t, "val_users", cfg.train.val_users, "train.");
        get_field(t, "val_beam", cfg.train.val_beam, "train.");
        get_field(t, "pairs_per_user", cfg.train.pairs_per_user, "train.");
    }
    if (j.contains("decode")) {
        const auto& d = j.at("decode");
        get_field(d, "T", cfg.decode.T, "decode.");
        get_field(d, "B", cfg.decode.B, "decode.");
        get_field(d, "k", cfg.decode.k, "decode.");
        get_field(d, "repredict_per_commit", cfg.decode.repredict_per_commit, "decode.");
        if (d.contains("order")) {
            std::string s;
            get_field(d, "order", s, "decode.");
            try {
                cfg.decode.order = decode_order_from_string(s);
            } catch (const std::invalid_argument& e) {
                throw ValidationError(std::string("config: ") + e.what());
            }
        }
        if (d.contains("mode")) {
            std::string s;
            get_field(d, "mode", s, "decode.");
            try {
                cfg.decode.mode = decode_mode_from_string(s);
            } catch (const std::invalid_argument& e) {
                throw ValidationError(std::string("config: ") + e.what());
            }
        }
    }
    cfg.finalize();
    return cfg;
}

void RunConfig::finalize() {
    if (threads < 1) throw ValidationError("config: threads must be at least 1");
    if (corpus.min_len < 3) throw ValidationError("config: corpus.min_len must be at least 3");
    if (corpus.max_history < 1) throw ValidationError("config: corpus.max_history must be at least 1");
    if (tokenizer.M < 1 || tokenizer.K < 2 || tokenizer.sub_dim < 1) {
        throw ValidationError("config: tokenizer needs M >= 1, K >= 2, sub_dim >= 1");
    }
    if (predictor.d_model % predictor.heads != 0) {
        throw ValidationError("config: predictor.d_model must be divisible by predictor.heads");
    }
    const int T = decode.T == 0 ? tokenizer.M : decode.T;
    if (T < 1 || T > tokenizer.M || tokenizer.M % T != 0) {
        throw ValidationError("config: decode.T must divide the number of code heads");
    }
    synth.seed = seed;
    tokenizer.seed = seed;
    train.seed = seed;
}

PredictorConfig RunConfig::predictor_config() const {
    PredictorConfig p = predictor;
    p.M = tokenizer.M;
    p.K = tokenizer.K;
    p.n_max = corpus.max_history;
    p.seed = seed;
    return p;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw ValidationError(e.what());
    }
    return run_config_from_json(j);
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("override must look like key.path=value: " + assignment);
    }
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    std::string pointer;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ValidationError("override has an empty key segment: " + assignment);
        pointer += "/" + part;
    }
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
        parsed = value;  // unquoted strings arrive as-is
    }
    j[nlohmann::json::json_pointer(pointer)] = parsed;
}

nlohmann::json tokenizer_config_to_json(const TokenizerConfig& cfg) {
    return {{"M", cfg.M},
            {"K", cfg.K},
            {"sub_dim", cfg.sub_dim},
            {"hidden", cfg.hidden},
            {"alpha", cfg.alpha},
            {"epochs", cfg.epochs},
            {"lr", cfg.lr},
            {"weight_decay", cfg.weight_decay},
            {"batch", cfg.batch},
            {"revive_every", cfg.revive_every},
            {"seed", cfg.seed}};
}

TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j) {
    TokenizerConfig cfg;
    get_field(j, "M", cfg.M, "tokenizer.");
    get_field(j, "K", cfg.K, "tokenizer.");
    get_field(j, "sub_dim", cfg.sub_dim, "tokenizer.");
    get_field(j, "hidden", cfg.hidden, "tokenizer.");
    get_field(j, "alpha", cfg.alpha, "tokenizer.");
    get_field(j, "epochs", cfg.epochs, "tokenizer.");
    get_field(j, "lr", cfg.lr, "tokenizer.");
    get_field(j, "weight_decay", cfg.weight_decay, "tokenizer.");
    get_field(j, "batch", cfg.batch, "tokenizer.");
    get_field(j, "revive_every", cfg.revive_every, "tokenizer.");
    get_field(j, "seed", cfg.seed, "tokenizer.");
    return cfg;
}

nlohmann::json predictor_config_to_json(const PredictorConfig& cfg) {
    return {{"layers", cfg.layers},
            {"d_model", cfg.d_model},
            {"heads", cfg.heads},
            {"d_ff", cfg.d_ff},
            {"pattern", to_string(cfg.pattern)},
            {"dropout", cfg.dropout},
            {"M", cfg.M},
            {"K", cfg.K},
            {"n_max", cfg.n_max},
            {"seed", cfg.seed}};
}

PredictorConfig predictor_config_from_json(const nlohmann::json& j) {
    PredictorConfig cfg;
    get_field(j, "layers", cfg.layers, "predictor.");
    get_field(j, "d_model", cfg.d_model, "predictor.");
    get_field(j, "heads", cfg.heads, "predictor.");
    get_field(j, "d_ff", cfg.d_ff, "predictor.");
    get_field(j, "dropout", cfg.dropout, "predictor.");
    get_field(j, "M", cfg.M, "predictor.");
    get_field(j, "K", cfg.K, "predictor.");
    get_field(j, "n_max", cfg.n_max, "predictor.");
    get_field(j, "seed", cfg.seed, "predictor.");
    if (j.contains("pattern")) {
        std::string s;
        get_field(j, "pattern", s, "predictor.");
        cfg.pattern = attention_pattern_from_string(s);
    }
    return cfg;
}

std::string config_hash_hex(const RunConfig& cfg) {
    const uint64_t h = fnv1a64(run_config_to_json(cfg).dump());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace diffrec
