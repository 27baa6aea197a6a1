#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffrec.h"

namespace {

struct RunDeleter {
    void operator()(diffrec_run* r) const { diffrec_run_destroy(r); }
};

int fail(diffrec_run* run, diffrec_status status) {
    std::fprintf(stderr, "error: %s\n", diffrec_run_error(run));
    return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrete diffusion recommender"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string workdir;
    std::string seed;
    std::string threads;
    std::vector<std::string> overrides;

    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--workdir", workdir, "run directory for inputs and artifacts");
    app.add_option("--seed", seed, "global random seed");
    app.add_option("--threads", threads, "worker threads for evaluation");
    app.set_version_flag("--version", std::string(diffrec_version()));

    const std::vector<std::string> names{"synth-data", "train-tokenizer", "tokenize", "train",
                                         "evaluate",   "decode",          "ablate"};
    const std::vector<std::string> descriptions{
        "generate a synthetic interaction corpus and item embeddings",
        "fit the multi-head vector quantizer on item embeddings",
        "assign each item its semantic id",
        "train the mask predictor",
        "score leave-one-out recommendations on the test split",
        "write ranked generations without scoring",
        "sweep decode orders, step counts, and attention patterns"};
    for (size_t i = 0; i < names.size(); ++i) {
        CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
        sub->add_option("overrides", overrides, "config overrides as dotted key=value pairs");
    }

    CLI11_PARSE(app, argc, argv);

    std::unique_ptr<diffrec_run, RunDeleter> run(diffrec_run_create());
    if (!run) {
        std::fprintf(stderr, "error: out of memory\n");
        return static_cast<int>(DIFFREC_ERR_RUNTIME);
    }

    if (!config_path.empty()) {
        const diffrec_status s = diffrec_run_load_config(run.get(), config_path.c_str());
        if (s != DIFFREC_OK) return fail(run.get(), s);
    }
    if (!workdir.empty()) {
        const diffrec_status s = diffrec_run_set_string(run.get(), "paths.workdir", workdir.c_str());
        if (s != DIFFREC_OK) return fail(run.get(), s);
    }
    if (!seed.empty()) {
        const diffrec_status s = diffrec_run_set(run.get(), ("seed=" + seed).c_str());
        if (s != DIFFREC_OK) return fail(run.get(), s);
    }
    if (!threads.empty()) {
        const diffrec_status s = diffrec_run_set(run.get(), ("threads=" + threads).c_str());
        if (s != DIFFREC_OK) return fail(run.get(), s);
    }
    for (const std::string& o : overrides) {
        const diffrec_status s = diffrec_run_set(run.get(), o.c_str());
        if (s != DIFFREC_OK) return fail(run.get(), s);
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    const diffrec_status s = diffrec_run_execute(run.get(), sub.c_str());
    if (s != DIFFREC_OK) return fail(run.get(), s);
    std::fputs(diffrec_run_output(run.get()), stdout);
    return 0;
}
