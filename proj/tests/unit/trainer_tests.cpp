#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "diffrec/gradcheck.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/synthetic.hpp"
#include "diffrec/trainer.hpp"

using namespace diffrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("diffrec-train-" + std::to_string(::getpid()) + "-" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void zero_params(MaskPredictor<double>& model) {
    ParamList<double> list;
    model.collect_params(list);
    for (auto& pr : list) pr.p->w.fill(0.0);
}

std::vector<Tensor<double>> snapshot_grads(MaskPredictor<double>& model) {
    ParamList<double> list;
    model.collect_params(list);
    std::vector<Tensor<double>> out;
    for (auto& pr : list) out.push_back(pr.p->g);
    return out;
}

// Single compiled call site for bitwise gradient comparisons across runs.
__attribute__((noinline)) double run_nll(MaskPredictor<double>& model,
                                         const std::vector<MaskedExample>& batch,
                                         double grad_scale, bool with_grad) {
    return masked_nll(model, batch, grad_scale, with_grad);
}

PredictorConfig small_cfg(int M, int K, int n_max, int d_model = 8) {
    PredictorConfig c;
    c.layers = 1;
    c.d_model = d_model;
    c.heads = 2;
    c.d_ff = 2 * d_model;
    c.M = M;
    c.K = K;
    c.n_max = n_max;
    return c;
}

}  // namespace

TEST_CASE("train pairs slide a window over each user's training prefix") {
    std::vector<Interaction> rows;
    for (int i = 0; i < 6; ++i) {
        rows.push_back({"u", std::string(1, static_cast<char>('a' + i)), static_cast<double>(i)});
    }
    LooSplit split = build_split(rows);

    SidCatalog cat;
    cat.M = 2;
    cat.K = 3;
    for (int i = 0; i < 6; ++i) {
        cat.add(std::string(1, static_cast<char>('a' + i)), {i % 3, (i / 3) % 3});
    }

    // Training prefix is [a, b, c, d]; windows predict b, c, d.
    auto pairs = build_train_pairs(split, cat, /*n_max=*/10, /*pairs_per_user=*/0);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].history == std::vector<SemanticID>{cat.sid_of(0)});
    CHECK(pairs[0].target == cat.sid_of(1));
    CHECK(pairs[2].history ==
          std::vector<SemanticID>{cat.sid_of(0), cat.sid_of(1), cat.sid_of(2)});
    CHECK(pairs[2].target == cat.sid_of(3));

    SUBCASE("histories are truncated to n_max most recent items") {
        auto short_pairs = build_train_pairs(split, cat, /*n_max=*/2, 0);
        REQUIRE(short_pairs.size() == 3);
        CHECK(short_pairs[2].history ==
              std::vector<SemanticID>{cat.sid_of(1), cat.sid_of(2)});
    }
    SUBCASE("pairs_per_user keeps the most recent windows") {
        auto few = build_train_pairs(split, cat, 10, 2);
        REQUIRE(few.size() == 2);
        CHECK(few[0].target == cat.sid_of(2));
        CHECK(few[1].target == cat.sid_of(3));
        CHECK(build_train_pairs(split, cat, 10, 50).size() == 3);
    }
    SUBCASE("items without semantic ids are an error") {
        SidCatalog missing;
        missing.M = 2;
        missing.K = 3;
        missing.add("a", {0, 0});
        CHECK_THROWS_WITH_AS(build_train_pairs(split, missing, 10, 0), doctest::Contains("b"),
                             std::runtime_error);
    }
}

TEST_CASE("history examples mask ratio-drawn history under a fully masked block") {
    VocabLayout vocab(2, 3);
    SequenceLayout seq(3, 2);
    TrainPair pair;
    pair.history = {{1, 2}, {0, 1}};
    pair.target = {2, 0};
    Rng rng = make_rng(81);

    for (int trial = 0; trial < 50; ++trial) {
        MaskedExample ex = build_his_example(pair, vocab, seq, rng);
        CHECK(ex.input.pad == 2);
        // next block is entirely [MASK] and never part of the loss
        CHECK(ex.input.tokens[6] == vocab.mask_token());
        CHECK(ex.input.tokens[7] == vocab.mask_token());
        REQUIRE_FALSE(ex.positions.empty());
        CHECK(ex.inv_r > 1.0);
        const std::vector<int32_t> original{vocab.token_of(0, 1), vocab.token_of(1, 2),
                                            vocab.token_of(0, 0), vocab.token_of(1, 1)};
        for (size_t t = 0; t < ex.positions.size(); ++t) {
            const int pos = ex.positions[t];
            CHECK(pos >= 2);
            CHECK(pos < 6);
            CHECK(ex.input.tokens[static_cast<size_t>(pos)] == vocab.mask_token());
            CHECK(ex.targets[t] == original[static_cast<size_t>(pos - 2)]);
        }
        for (int p = 2; p < 6; ++p) {
            const bool masked =
                std::find(ex.positions.begin(), ex.positions.end(), p) != ex.positions.end();
            if (!masked) CHECK(ex.input.tokens[static_cast<size_t>(p)] == original[static_cast<size_t>(p - 2)]);
        }
    }
}

TEST_CASE("item examples mask ratio-drawn block positions over a visible history") {
    VocabLayout vocab(2, 3);
    SequenceLayout seq(3, 2);
    TrainPair pair;
    pair.history = {{1, 2}, {0, 1}};
    pair.target = {2, 0};
    Rng rng = make_rng(82);

    for (int trial = 0; trial < 50; ++trial) {
        MaskedExample ex = build_item_example(pair, vocab, seq, rng);
        // history stays fully visible
        CHECK(ex.input.tokens[2] == vocab.token_of(0, 1));
        CHECK(ex.input.tokens[3] == vocab.token_of(1, 2));
        CHECK(ex.input.tokens[4] == vocab.token_of(0, 0));
        CHECK(ex.input.tokens[5] == vocab.token_of(1, 1));
        REQUIRE_FALSE(ex.positions.empty());
        for (size_t t = 0; t < ex.positions.size(); ++t) {
            const int pos = ex.positions[t];
            CHECK(pos >= 6);
            CHECK(pos < 8);
            const int m = pos - 6;
            CHECK(ex.input.tokens[static_cast<size_t>(pos)] == vocab.mask_token());
            CHECK(ex.targets[t] == vocab.token_of(m, pair.target[static_cast<size_t>(m)]));
        }
        for (int m = 0; m < 2; ++m) {
            const bool masked =
                std::find(ex.positions.begin(), ex.positions.end(), 6 + m) != ex.positions.end();
            if (!masked) {
                CHECK(ex.input.tokens[static_cast<size_t>(6 + m)] ==
                      vocab.token_of(m, pair.target[static_cast<size_t>(m)]));
            }
        }
    }
}

TEST_CASE("uniform predictor recovers the closed-form history loss") {
    // 4 eligible history positions, ratio pinned at 0.5, exactly 2 masked:
    // loss = (1/0.5) * 2 * ln(4) = 4 ln 4 when every code is equally likely.
    MaskPredictor<double> model(small_cfg(1, 4, 4));
    zero_params(model);
    TrainPair pair;
    pair.history = {{0}, {1}, {2}, {3}};
    pair.target = {0};
    Rng rng = make_rng(83);

    MaskedExample ex;
    do {
        ex = build_his_example(pair, model.vocab, model.seq, rng, 0.5);
    } while (ex.positions.size() != 2);
    CHECK(ex.inv_r == 2.0);

    const double loss = run_nll(model, {ex}, 1.0, false);
    CHECK(loss == doctest::Approx(4.0 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("uniform predictor recovers the closed-form item loss") {
    // M = 4 block positions, two codes per head, ratio 0.5, exactly 2 masked:
    // loss = (1/0.5) * 2 * ln(2) = 4 ln 2.
    MaskPredictor<double> model(small_cfg(4, 2, 2));
    zero_params(model);
    TrainPair pair;
    pair.history = {{0, 1, 0, 1}};
    pair.target = {1, 0, 1, 0};
    Rng rng = make_rng(84);

    MaskedExample ex;
    do {
        ex = build_item_example(pair, model.vocab, model.seq, rng, 0.5);
    } while (ex.positions.size() != 2);
    CHECK(ex.inv_r == 2.0);

    const double loss = run_nll(model, {ex}, 1.0, false);
    CHECK(loss == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("losses average over the batch and weight by 1/r") {
    MaskPredictor<double> model(small_cfg(1, 4, 4));
    zero_params(model);
    TrainPair pair;
    pair.history = {{0}, {1}, {2}, {3}};
    pair.target = {0};
    Rng rng = make_rng(85);

    auto two_masked = [&]() {
        MaskedExample ex;
        do {
            ex = build_his_example(pair, model.vocab, model.seq, rng, 0.5);
        } while (ex.positions.size() != 2);
        return ex;
    };
    MaskedExample a = two_masked();
    MaskedExample b = two_masked();
    b.inv_r = 4.0;  // as if drawn at r = 0.25
    const double loss = run_nll(model, {a, b}, 1.0, false);
    // (2 * 2ln4 + 4 * 2ln4) / 2
    CHECK(loss == doctest::Approx(6.0 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("zero grad-scale contributes exactly nothing to gradients") {
    MaskPredictor<double> model(small_cfg(2, 3, 3));
    TrainPair pair;
    pair.history = {{1, 2}, {0, 1}};
    pair.target = {2, 0};
    Rng rng = make_rng(86);
    std::vector<MaskedExample> item{build_item_example(pair, model.vocab, model.seq, rng)};
    std::vector<MaskedExample> his{build_his_example(pair, model.vocab, model.seq, rng)};

    model.zero_grad();
    run_nll(model, item, 1.0, true);
    const auto item_only = snapshot_grads(model);

    model.zero_grad();
    run_nll(model, item, 1.0, true);
    const double his_loss = run_nll(model, his, 0.0, true);
    const auto with_weightless_his = snapshot_grads(model);

    CHECK(his_loss > 0.0);  // the loss value itself is still reported
    REQUIRE(item_only.size() == with_weightless_his.size());
    for (size_t i = 0; i < item_only.size(); ++i) {
        for (int64_t j = 0; j < item_only[i].size(); ++j) {
            CHECK(item_only[i][j] == with_weightless_his[i][j]);
        }
    }
}

TEST_CASE("grad scale multiplies gradients linearly") {
    MaskPredictor<double> model(small_cfg(2, 3, 3));
    TrainPair pair;
    pair.history = {{1, 2}, {0, 1}};
    pair.target = {2, 0};
    Rng rng = make_rng(87);
    std::vector<MaskedExample> his{build_his_example(pair, model.vocab, model.seq, rng)};

    model.zero_grad();
    const double l1 = run_nll(model, his, 1.0, true);
    const auto g1 = snapshot_grads(model);
    model.zero_grad();
    const double l2 = run_nll(model, his, 2.0, true);
    const auto g2 = snapshot_grads(model);

    CHECK(l1 == l2);  // value never carries the scale
    for (size_t i = 0; i < g1.size(); ++i) {
        for (int64_t j = 0; j < g1[i].size(); ++j) {
            CHECK(g2[i][j] == doctest::Approx(2.0 * g1[i][j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("masked-loss gradients match finite differences") {
    MaskPredictor<double> model(small_cfg(2, 3, 2, 6));
    TrainPair pair;
    pair.history = {{1, 2}, {0, 1}};
    pair.target = {2, 0};
    Rng rng = make_rng(88);
    std::vector<MaskedExample> batch{build_item_example(pair, model.vocab, model.seq, rng),
                                     build_his_example(pair, model.vocab, model.seq, rng)};

    // The key-projection bias has an exactly zero gradient (softmax shift
    // invariance), so it stays out of the FD sweep.
    ParamList<double> params;
    model.collect_params(params);
    auto swept = [](const ParamRef<double>& pr) {
        return pr.name.find("wk.bias") == std::string::npos;
    };

    GradCheckCase gc;
    gc.name = "masked-nll";
    size_t n = 0;
    for (auto& pr : params) {
        if (swept(pr)) n += static_cast<size_t>(pr.p->w.size());
    }
    gc.point.resize(n);
    {
        size_t pos = 0;
        for (auto& pr : params) {
            if (!swept(pr)) continue;
            for (auto v : pr.p->w.data) gc.point[pos++] = v;
        }
    }
    auto apply = [&](std::span<const double> p) {
        size_t pos = 0;
        for (auto& pr : params) {
            if (!swept(pr)) continue;
            for (auto& v : pr.p->w.data) v = p[pos++];
        }
    };
    gc.value = [&](std::span<const double> p) {
        apply(p);
        return masked_nll(model, batch, 1.0, false);
    };
    gc.gradient = [&](std::span<const double> p) {
        apply(p);
        model.zero_grad();
        masked_nll(model, batch, 1.0, true);
        std::vector<double> g;
        for (auto& pr : params) {
            if (!swept(pr)) continue;
            g.insert(g.end(), pr.p->g.data.begin(), pr.p->g.data.end());
        }
        return g;
    };
    // Layer norm over the low-variance embedding rows gives this composite a
    // large third derivative, so a smaller step keeps FD truncation below the
    // tolerance (error here scales as eps^2; roundoff stays ~1e-10 at 1e-6).
    CHECK(check_gradient(gc, 1e-6) < 1e-5);
}

TEST_CASE("training descends and restores the best validation weights") {
    std::vector<Interaction> rows;
    const std::vector<std::string> items{"a", "b", "c", "d", "e", "f"};
    for (int u = 0; u < 12; ++u) {
        for (int j = 0; j < 5; ++j) {
            // deterministic cyclic histories so there is something to learn
            rows.push_back({zero_padded_id("u", u, 12), items[static_cast<size_t>((u + j) % 6)],
                            static_cast<double>(j)});
        }
    }
    LooSplit split = build_split(rows);
    SidCatalog cat;
    cat.M = 2;
    cat.K = 3;
    for (int i = 0; i < 6; ++i) {
        cat.add(items[static_cast<size_t>(i)], {i % 3, i / 3});
    }

    MaskPredictor<double> model(small_cfg(2, 3, 4));
    TrainConfig tcfg;
    tcfg.epochs = 6;
    tcfg.lr = 5e-3;
    tcfg.batch = 64;
    tcfg.val_every = 2;
    tcfg.val_users = 0;
    tcfg.val_beam = 2;
    TrainResult result = train_predictor(model, split, cat, tcfg);

    REQUIRE_FALSE(result.log.empty());
    CHECK(result.steps > 0);
    CHECK(result.best_epoch >= 0);
    CHECK(result.best_val >= 0.0);
    CHECK(result.log.back().loss_item < result.log.front().loss_item);
    bool some_unvalidated = false, some_validated = false;
    for (const auto& row : result.log) {
        (row.val_recall10 < 0.0 ? some_unvalidated : some_validated) = true;
    }
    CHECK(some_validated);
    CHECK(some_unvalidated);

    TempDir dir;
    const fs::path log_path = dir.path / "train_log.csv";
    write_train_log(log_path, result.log);
    std::ifstream in(log_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,step,loss_total,loss_item,loss_his,val_recall@10,wall_ms");
    int data_lines = 0;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) ++data_lines;
    }
    CHECK(data_lines == static_cast<int>(result.log.size()));
}

TEST_CASE("non-finite training losses abort with epoch and step") {
    std::vector<Interaction> rows;
    for (int j = 0; j < 4; ++j) {
        rows.push_back({"u", std::string(1, static_cast<char>('a' + j)), static_cast<double>(j)});
    }
    LooSplit split = build_split(rows);
    SidCatalog cat;
    cat.M = 2;
    cat.K = 3;
    for (int i = 0; i < 4; ++i) cat.add(std::string(1, static_cast<char>('a' + i)), {i % 3, i / 3});

    MaskPredictor<double> model(small_cfg(2, 3, 4));
    model.out_proj.W.w[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig tcfg;
    tcfg.epochs = 2;
    CHECK_THROWS_WITH_AS(train_predictor(model, split, cat, tcfg), doctest::Contains("epoch"),
                         std::runtime_error);
}
