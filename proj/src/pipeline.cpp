#include "diffrec/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <sstream>

#include "diffrec/checkpoint.hpp"
#include "diffrec/io_util.hpp"
#include "diffrec/metrics.hpp"
#include "diffrec/synthetic.hpp"
#include "diffrec/trainer.hpp"
#include "diffrec/version.hpp"

namespace diffrec {

namespace {

struct Loaded {
    LooSplit split;
    SidCatalog catalog;
};

Loaded load_split_and_sids(const RunConfig& cfg) {
    Loaded l;
    l.split = build_split(load_interactions(cfg.interactions_path()), cfg.corpus.min_len);
    l.catalog = load_sids(cfg.sids_path(), cfg.tokenizer.M, cfg.tokenizer.K);
    return l;
}

MaskPredictor<float> load_predictor(const RunConfig& cfg) {
    const Checkpoint ck = load_checkpoint(cfg.predictor_ckpt());
    const PredictorConfig pcfg = predictor_config_from_json(ck.config.at("predictor"));
    MaskPredictor<float> model(pcfg);
    load_model(ck, model);
    return model;
}

std::vector<int> all_user_indices(const LooSplit& split) {
    std::vector<int> users(split.users.size());
    for (size_t i = 0; i < users.size(); ++i) users[i] = static_cast<int>(i);
    return users;
}

DecodeConfig resolved_decode(const RunConfig& cfg) {
    DecodeConfig d = cfg.decode;
    if (d.T == 0) d.T = cfg.tokenizer.M;
    return d;
}

void write_manifest(const RunConfig& cfg, const std::string& subcommand, double wall_ms,
                    const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["version"] = kVersion;
    j["seed"] = cfg.seed;
    j["config_hash"] = config_hash_hex(cfg);
    j["wall_ms"] = wall_ms;
    j["outputs"] = outputs;
    j["config"] = run_config_to_json(cfg);
    atomic_write_file(cfg.manifest_path(), j.dump(2) + "\n");
}

void write_tokenizer_log(const std::filesystem::path& path, const std::vector<double>& curve) {
    std::string out = "epoch,loss\n";
    for (size_t i = 0; i < curve.size(); ++i) {
        std::ostringstream os;
        os.precision(6);
        os << std::fixed << i << ',' << curve[i] << '\n';
        out += os.str();
    }
    atomic_write_file(path, out);
}

void cmd_synth_data(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    SynthData data = generate_synthetic(cfg.synth);
    save_interactions(cfg.interactions_path(), data.interactions);
    save_embeddings(cfg.embeddings_path(), data.embeddings);
    outputs = {cfg.interactions_path().string(), cfg.embeddings_path().string()};
    out << "interactions " << data.interactions.size() << "\n";
    out << "items " << data.embeddings.count() << "\n";
    out << "users " << cfg.synth.n_users << "\n";
}

void cmd_train_tokenizer(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    const EmbeddingTable table = load_embeddings(cfg.embeddings_path());
    MultiHeadVqVae<float> model(table.dim, cfg.tokenizer);
    const TokenizerTrainResult result = model.train(table.vectors);

    nlohmann::json ckcfg;
    ckcfg["tokenizer"] = tokenizer_config_to_json(cfg.tokenizer);
    ckcfg["in_dim"] = table.dim;
    save_model(cfg.tokenizer_ckpt(), model, ckcfg);
    write_tokenizer_log(cfg.tokenizer_log(), result.loss_curve);
    outputs = {cfg.tokenizer_ckpt().string(), cfg.tokenizer_log().string()};

    out << "epochs " << result.loss_curve.size() << "\n";
    out << "final_loss " << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
    out << "reconstruction_mse " << model.reconstruction_mse(table.vectors) << "\n";
    for (int m = 0; m < cfg.tokenizer.M; ++m) {
        out << "codes_used_head_" << m << " " << result.codes_used[static_cast<size_t>(m)] << "\n";
    }
}

void cmd_tokenize(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    const EmbeddingTable table = load_embeddings(cfg.embeddings_path());
    const Checkpoint ck = load_checkpoint(cfg.tokenizer_ckpt());
    const TokenizerConfig tcfg = tokenizer_config_from_json(ck.config.at("tokenizer"));
    const int in_dim = ck.config.at("in_dim").get<int>();
    if (in_dim != table.dim) {
        throw ValidationError("tokenize: embedding dim " + std::to_string(table.dim) +
                              " does not match checkpoint dim " + std::to_string(in_dim));
    }
    MultiHeadVqVae<float> model(in_dim, tcfg);
    load_model(ck, model);

    const SidCatalog catalog = tokenize_catalog(model, table);
    save_sids(cfg.sids_path(), catalog);
    outputs = {cfg.sids_path().string()};
    out << "items " << catalog.item_ids.size() << "\n";
    out << "distinct_sids " << catalog.by_sid.size() << "\n";
    out << "collision_rate " << catalog.collision_rate() << "\n";
}

void cmd_train(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    Loaded l = load_split_and_sids(cfg);
    MaskPredictor<float> model(cfg.predictor_config());
    const TrainResult result = train_predictor(model, l.split, l.catalog, cfg.train);

    nlohmann::json ckcfg;
    ckcfg["predictor"] = predictor_config_to_json(model.cfg);
    save_model(cfg.predictor_ckpt(), model, ckcfg);
    write_train_log(cfg.train_log(), result.log);
    outputs = {cfg.predictor_ckpt().string(), cfg.train_log().string()};

    out << "epochs " << result.log.size() << "\n";
    out << "steps " << result.steps << "\n";
    out << "best_epoch " << result.best_epoch << "\n";
    out << "best_val_recall@10 " << result.best_val << "\n";
}

void cmd_evaluate(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    Loaded l = load_split_and_sids(cfg);
    MaskPredictor<float> model = load_predictor(cfg);

    std::vector<GenerationRow> gens;
    const DecodeConfig dcfg = resolved_decode(cfg);
    const EvalResult ev = evaluate_users(model, l.catalog, l.split, all_user_indices(l.split),
                                         /*use_test=*/true, dcfg, cfg.threads, &gens);
    write_results_csv(cfg.results_path(), {make_result_row(cfg.dataset, "diffrec", dcfg, ev)});
    write_generations(cfg.generations_path(), gens);
    outputs = {cfg.results_path().string(), cfg.generations_path().string()};

    out << "users " << ev.users << "\n";
    for (int k : default_recall_ks()) out << "recall@" << k << " " << ev.recall.at(k) << "\n";
    for (int k : default_ndcg_ks()) out << "ndcg@" << k << " " << ev.ndcg.at(k) << "\n";
    out << "invalid_rate " << ev.invalid_rate << "\n";
    if (ev.shortfall > 0) out << "shortfall_users " << ev.shortfall << "\n";
}

void cmd_decode(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    Loaded l = load_split_and_sids(cfg);
    MaskPredictor<float> model = load_predictor(cfg);

    std::vector<GenerationRow> gens;
    evaluate_users(model, l.catalog, l.split, all_user_indices(l.split), /*use_test=*/true,
                   resolved_decode(cfg), cfg.threads, &gens);
    write_generations(cfg.generations_path(), gens);
    outputs = {cfg.generations_path().string()};
    out << "users " << l.split.users.size() << "\n";
    out << "generations " << gens.size() << "\n";
}

void cmd_ablate(RunConfig& cfg, std::ostream& out, std::vector<std::string>& outputs) {
    Loaded l = load_split_and_sids(cfg);
    MaskPredictor<float> baseline = load_predictor(cfg);
    const std::vector<int> users = all_user_indices(l.split);
    std::vector<ResultRow> rows;

    auto eval_into = [&](const MaskPredictor<float>& model, const DecodeConfig& dcfg,
                         const std::string& name) {
        const EvalResult ev =
            evaluate_users(model, l.catalog, l.split, users, /*use_test=*/true, dcfg, cfg.threads);
        ResultRow row = make_result_row(cfg.dataset, name, dcfg, ev);
        rows.push_back(row);
        out << name << " recall@10 " << ev.recall.at(10) << "\n";
    };

    for (DecodeOrder order :
         {DecodeOrder::adaptive, DecodeOrder::left_to_right, DecodeOrder::right_to_left}) {
        DecodeConfig d = resolved_decode(cfg);
        d.order = order;
        eval_into(baseline, d, std::string("order=") + to_string(order));
    }
    for (int T = 1; T <= cfg.tokenizer.M; ++T) {
        if (cfg.tokenizer.M % T != 0) continue;
        DecodeConfig d = resolved_decode(cfg);
        d.T = T;
        d.order = DecodeOrder::adaptive;
        eval_into(baseline, d, "steps=" + std::to_string(T));
    }
    for (AttentionPattern pattern :
         {AttentionPattern::bidirectional, AttentionPattern::causal, AttentionPattern::inter_item_causal,
          AttentionPattern::intra_item_causal}) {
        PredictorConfig pcfg = cfg.predictor_config();
        pcfg.pattern = pattern;
        MaskPredictor<float> model(pcfg);
        train_predictor(model, l.split, l.catalog, cfg.train);
        eval_into(model, resolved_decode(cfg), "pattern=" + to_string(pattern));
    }

    write_results_csv(cfg.ablation_path(), rows);
    outputs = {cfg.ablation_path().string()};
    out << "rows " << rows.size() << "\n";
}

}  // namespace

std::vector<std::string> ablation_plan(int M) {
    std::vector<std::string> plan;
    for (const char* o : {"adaptive", "left2right", "right2left"}) {
        plan.push_back(std::string("order=") + o);
    }
    for (int T = 1; T <= M; ++T) {
        if (M % T == 0) plan.push_back("steps=" + std::to_string(T));
    }
    for (const char* p : {"bidirectional", "causal", "inter-item-causal", "intra-item-causal"}) {
        plan.push_back(std::string("pattern=") + p);
    }
    return plan;
}

const std::vector<std::string>& subcommand_names() {
    static const std::vector<std::string> names{"synth-data", "train-tokenizer", "tokenize",
                                                "train",      "evaluate",        "decode",
                                                "ablate"};
    return names;
}

void run_subcommand(const std::string& name, RunConfig& cfg, std::ostream& out) {
    std::filesystem::create_directories(cfg.workdir());
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;

    if (name == "synth-data") {
        cmd_synth_data(cfg, out, outputs);
    } else if (name == "train-tokenizer") {
        cmd_train_tokenizer(cfg, out, outputs);
    } else if (name == "tokenize") {
        cmd_tokenize(cfg, out, outputs);
    } else if (name == "train") {
        cmd_train(cfg, out, outputs);
    } else if (name == "evaluate") {
        cmd_evaluate(cfg, out, outputs);
    } else if (name == "decode") {
        cmd_decode(cfg, out, outputs);
    } else if (name == "ablate") {
        cmd_ablate(cfg, out, outputs);
    } else {
        throw ValidationError("unknown subcommand: " + name);
    }

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(cfg, name, wall_ms, outputs);
}

}  // namespace diffrec
