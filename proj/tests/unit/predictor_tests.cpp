#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffrec/predictor.hpp"
#include "diffrec/rng.hpp"

using namespace diffrec;

namespace {

PredictorConfig tiny_cfg() {
    PredictorConfig c;
    c.layers = 1;
    c.d_model = 8;
    c.heads = 2;
    c.d_ff = 16;
    c.M = 2;
    c.K = 3;
    c.n_max = 2;
    return c;
}

// One out-of-line entry point for every forward in this file; separate
// inlined call sites may contract floating-point ops differently, which
// breaks bitwise comparisons between logically identical runs.
__attribute__((noinline)) Tensor<float> run_forward(const MaskPredictor<float>& model,
                                                    const std::vector<AssembledInput>& batch) {
    return model.forward(batch, nullptr);
}

__attribute__((noinline)) Tensor<float> run_predict(const MaskPredictor<float>& model,
                                                    const std::vector<int32_t>& tokens) {
    return model.predict(tokens);
}

}  // namespace

TEST_CASE("assemble_input left-pads whole items and places the next block") {
    VocabLayout vocab(2, 3);
    SequenceLayout seq(3, 2);
    std::vector<SemanticID> history{{1, 2}, {0, 1}};
    std::vector<int32_t> block{vocab.token_of(0, 2), vocab.mask_token()};

    AssembledInput in = assemble_input(history, block, vocab, seq);
    CHECK(in.pad == 2);
    REQUIRE(in.tokens.size() == 8);
    CHECK(in.tokens[0] == vocab.pad_token());
    CHECK(in.tokens[1] == vocab.pad_token());
    CHECK(in.tokens[2] == vocab.token_of(0, 1));
    CHECK(in.tokens[3] == vocab.token_of(1, 2));
    CHECK(in.tokens[4] == vocab.token_of(0, 0));
    CHECK(in.tokens[5] == vocab.token_of(1, 1));
    CHECK(in.tokens[6] == vocab.token_of(0, 2));
    CHECK(in.tokens[7] == vocab.mask_token());

    SUBCASE("full history has no padding") {
        history.push_back({2, 2});
        AssembledInput full = assemble_input(history, block, vocab, seq);
        CHECK(full.pad == 0);
    }
    SUBCASE("history longer than n_max is the caller's bug") {
        history.assign(4, SemanticID{0, 0});
        CHECK_THROWS_AS(assemble_input(history, block, vocab, seq), std::invalid_argument);
    }
    SUBCASE("semantic id width must be M") {
        history[0] = {1};
        CHECK_THROWS_AS(assemble_input(history, block, vocab, seq), std::invalid_argument);
    }
    SUBCASE("next-block tokens must sit in their own head") {
        block[1] = vocab.token_of(0, 1);  // head-0 token in slot 1
        CHECK_THROWS_AS(assemble_input(history, block, vocab, seq), std::invalid_argument);
        block = {vocab.pad_token(), vocab.mask_token()};
        CHECK_THROWS_AS(assemble_input(history, block, vocab, seq), std::invalid_argument);
    }
    SUBCASE("next block must have M entries") {
        CHECK_THROWS_AS(assemble_input(history, {vocab.mask_token()}, vocab, seq),
                        std::invalid_argument);
    }
}

TEST_CASE("pad positions embed as [PAD] regardless of their token value") {
    MaskPredictor<float> model(tiny_cfg());
    const auto& vocab = model.vocab;

    AssembledInput a;
    a.tokens = {vocab.pad_token(), vocab.pad_token(),
                vocab.token_of(0, 1), vocab.token_of(1, 2),
                vocab.mask_token(), vocab.mask_token()};
    a.pad = 2;
    AssembledInput b = a;
    b.tokens[0] = vocab.token_of(0, 0);  // garbage under the pad prefix
    b.tokens[1] = vocab.mask_token();

    Tensor<float> la = run_forward(model, {a});
    Tensor<float> lb = run_forward(model, {b});
    REQUIRE(la.size() == lb.size());
    for (int64_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
}

TEST_CASE("logits outside a position's head block are exactly the -inf stand-in") {
    MaskPredictor<float> model(tiny_cfg());
    const int V = model.vocab.vocab_size();
    AssembledInput in;
    in.tokens = {model.vocab.pad_token(), model.vocab.pad_token(),
                 model.vocab.token_of(0, 2), model.vocab.token_of(1, 0),
                 model.vocab.mask_token(), model.vocab.mask_token()};
    in.pad = 2;
    Tensor<float> logits = run_forward(model, {in});
    REQUIRE(logits.size() == static_cast<int64_t>(6) * V);
    for (int p = 0; p < 6; ++p) {
        const int m = model.seq.offset_of(p);
        const int lo = m * model.vocab.K, hi = lo + model.vocab.K;
        for (int t = 0; t < V; ++t) {
            const float v = logits.at2(p, t);
            if (t < lo || t >= hi) {
                CHECK(v == kNegInfLogit<float>);
            } else {
                CHECK(v != kNegInfLogit<float>);
                CHECK(std::isfinite(v));
            }
        }
    }
}

TEST_CASE("predict infers the pad prefix from the leading [PAD] run") {
    MaskPredictor<float> model(tiny_cfg());
    const auto& vocab = model.vocab;
    std::vector<int32_t> tokens{vocab.pad_token(), vocab.pad_token(),
                                vocab.token_of(0, 1), vocab.token_of(1, 1),
                                vocab.mask_token(), vocab.mask_token()};
    AssembledInput explicit_in;
    explicit_in.tokens = tokens;
    explicit_in.pad = 2;

    Tensor<float> via_predict = run_predict(model, tokens);
    Tensor<float> via_forward = run_forward(model, {explicit_in});
    for (int64_t i = 0; i < via_predict.size(); ++i) CHECK(via_predict[i] == via_forward[i]);

    SUBCASE("empty history is all padding") {
        std::vector<int32_t> empty_hist{vocab.pad_token(), vocab.pad_token(), vocab.pad_token(),
                                        vocab.pad_token(), vocab.mask_token(), vocab.mask_token()};
        Tensor<float> l = run_predict(model, empty_hist);
        CHECK(l.size() == static_cast<int64_t>(6) * vocab.vocab_size());
    }
}

TEST_CASE("forward validates batch shape, pad prefix and token range") {
    MaskPredictor<float> model(tiny_cfg());
    const auto& vocab = model.vocab;
    AssembledInput ok;
    ok.tokens = {vocab.pad_token(), vocab.pad_token(), vocab.token_of(0, 0), vocab.token_of(1, 0),
                 vocab.mask_token(), vocab.mask_token()};
    ok.pad = 2;

    CHECK_THROWS_AS(run_forward(model, {}), std::invalid_argument);

    AssembledInput short_seq = ok;
    short_seq.tokens.pop_back();
    CHECK_THROWS_AS(run_forward(model, {short_seq}), std::invalid_argument);

    AssembledInput bad_pad = ok;
    bad_pad.pad = 1;  // not a multiple of M
    CHECK_THROWS_AS(run_forward(model, {bad_pad}), std::invalid_argument);
    bad_pad.pad = 6;  // beyond the history
    CHECK_THROWS_AS(run_forward(model, {bad_pad}), std::invalid_argument);
    bad_pad.pad = -2;
    CHECK_THROWS_AS(run_forward(model, {bad_pad}), std::invalid_argument);

    AssembledInput bad_tok = ok;
    bad_tok.tokens[4] = vocab.vocab_size();
    CHECK_THROWS_AS(run_forward(model, {bad_tok}), std::invalid_argument);
    bad_tok.tokens[4] = -1;
    CHECK_THROWS_AS(run_forward(model, {bad_tok}), std::invalid_argument);
}

TEST_CASE("same seed builds identical predictors, different seeds do not") {
    PredictorConfig cfg = tiny_cfg();
    MaskPredictor<float> a(cfg), b(cfg);
    ParamList<float> pa, pb;
    a.collect_params(pa);
    b.collect_params(pb);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        for (int64_t j = 0; j < pa[i].p->w.size(); ++j) {
            CHECK(pa[i].p->w[j] == pb[i].p->w[j]);
        }
    }
    cfg.seed = 43;
    MaskPredictor<float> c(cfg);
    ParamList<float> pc;
    c.collect_params(pc);
    bool any_diff = false;
    for (size_t i = 0; i < pa.size() && !any_diff; ++i) {
        for (int64_t j = 0; j < pa[i].p->w.size() && !any_diff; ++j) {
            any_diff = pa[i].p->w[j] != pc[i].p->w[j];
        }
    }
    CHECK(any_diff);
}

TEST_CASE("prewarmed mask cache serves every pad prefix") {
    MaskPredictor<float> model(tiny_cfg());
    model.prewarm_masks();
    for (int items = 0; items <= model.seq.n_max; ++items) {
        AssembledInput in;
        in.tokens.assign(static_cast<size_t>(model.seq.length()), model.vocab.pad_token());
        in.pad = (model.seq.n_max - items) * model.seq.M;
        int pos = in.pad;
        for (int i = 0; i < items; ++i) {
            for (int m = 0; m < model.seq.M; ++m) {
                in.tokens[static_cast<size_t>(pos++)] = model.vocab.token_of(m, 0);
            }
        }
        for (int m = 0; m < model.seq.M; ++m) {
            in.tokens[static_cast<size_t>(model.seq.block_begin() + m)] = model.vocab.mask_token();
        }
        CHECK_NOTHROW(run_forward(model, {in}));
    }
}
