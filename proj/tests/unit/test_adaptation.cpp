// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "retrans/adaptation.hpp"
#include "retrans/model.hpp"
#include "retrans/rng.hpp"

#include "../gradcheck.hpp"
#include "../support.hpp"

using namespace retrans;

namespace {

ModelConfig adapt_model_config(size_t d_model = 8, size_t n_layers = 2) {
    return gradcheck::tiny_config(32, d_model, n_layers, 2, 16, 48);
}

AdaptationConfig ma_config(size_t r_adapter = 2, bool lora = true) {
    AdaptationConfig cfg;
    cfg.strategy = Strategy::MultiAdapter;
    cfg.r_adapter = r_adapter;
    cfg.use_lora = lora;
    cfg.r_lora = 2;
    return cfg;
}

AdaptationConfig s2s_config(bool lora = true, size_t n_prefix = 1) {
    AdaptationConfig cfg;
    cfg.strategy = Strategy::Seq2SeqUnified;
    cfg.use_lora = lora;
    cfg.r_lora = 2;
    cfg.n_prefix = n_prefix;
    return cfg;
}

std::vector<TokenId> random_ids(size_t n, size_t vocab, uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenId> ids;
    for (size_t i = 0; i < n; ++i) ids.push_back(TokenId(rng.next_below(vocab)));
    return ids;
}

} // namespace

TEST_CASE("adapter_apply reproduces the hand-checked example") {
    // d=2, r=1: h=(2,1), down=(1,0)^T -> bottleneck 2, relu 2,
    // up=(0.5,0.5) -> h' = (3,2).
    ModelConfig mc = gradcheck::tiny_config(8, 2, 1, 1, 4, 16);
    BackboneParams bb = BackboneParams::init(mc, 1);
    AdaptationConfig cfg = ma_config(1, false);
    AdaptationState st = init_adaptation(bb, cfg, 2);

    const auto& idx = st.adapters.at(Task::AsmToSrc)[0];
    st.store.tensor(idx.down)[0] = 1.0; // d x r column (1, 0)^T
    st.store.tensor(idx.down)[1] = 0.0;
    st.store.tensor(idx.up)[0] = 0.5;   // r x d row (0.5, 0.5)
    st.store.tensor(idx.up)[1] = 0.5;

    auto out = adapter_apply({2.0, 1.0}, st, Task::AsmToSrc, 0);
    CHECK(out[0] == doctest::Approx(3.0));
    CHECK(out[1] == doctest::Approx(2.0));

    // Negative bottleneck: ReLU kills the residual path.
    st.store.tensor(idx.down)[0] = -1.0;
    auto same = adapter_apply({2.0, 1.0}, st, Task::AsmToSrc, 0);
    CHECK(same[0] == 2.0);
    CHECK(same[1] == 1.0);

    CHECK_THROWS_AS(adapter_apply({1.0, 1.0}, st, Task::SrcToAsm, 5), std::out_of_range);
}

TEST_CASE("zero-initialized adapters are an exact identity") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 3);
    AdaptationState st = init_adaptation(bb, ma_config(), 4);
    std::vector<double> h = {1.0, -2.0, 3.0, 0.5, -0.25, 4.0, 0.0, 1.5};
    auto out = adapter_apply(h, st, Task::AsmToSrc, 0);
    CHECK(out == h);
}

TEST_CASE("identity at init: adapted forward equals bare forward bit-for-bit") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 5);
    gradcheck::randomize_store(bb.store, 6);

    for (auto cfg : {ma_config(), s2s_config()}) {
        AdaptationState st = init_adaptation(bb, cfg, 7);
        for (uint64_t seed = 0; seed < 10; ++seed) {
            // Streams include prefix carrier tokens to exercise substitution.
            auto ids = random_ids(10, mc.vocab_size, 100 + seed);
            ids[0] = Vocab::prefix_id_for(st.active_task);
            ForwardTrace bare, adapted;
            forward(bb, nullptr, ids, bare);
            forward(bb, &st, ids, adapted);
            CHECK(bare.logits == adapted.logits);
        }
    }
}

TEST_CASE("lora_apply with a zero factor matches the plain projection") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 8);
    gradcheck::randomize_store(bb.store, 9);
    AdaptationState st = init_adaptation(bb, ma_config(), 10);

    std::vector<double> x = {0.5, -1.0, 2.0, 0.25, -0.75, 1.0, 0.0, -2.0};
    const double* W = bb.store.tensor(bb.layers[0].wq);
    auto with_lora = lora_apply(x, W, 8, 8, st, st.lora[0].wq);
    std::vector<double> plain(8, 0.0);
    for (size_t j = 0; j < 8; ++j)
        for (size_t i = 0; i < 8; ++i) plain[j] += x[i] * W[i * 8 + j];
    for (size_t j = 0; j < 8; ++j) CHECK(with_lora[j] == doctest::Approx(plain[j]));
}

TEST_CASE("materialized LoRA delta has rank at most r") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 11);
    AdaptationState st = init_adaptation(bb, ma_config(), 12);
    gradcheck::randomize_store(st.store, 13);

    size_t d = 8, r = st.config.r_lora;
    const double* down = st.store.tensor(st.lora[0].wq.down); // d x r
    const double* up = st.store.tensor(st.lora[0].wq.up);     // r x d
    std::vector<double> delta(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t k = 0; k < r; ++k)
            for (size_t j = 0; j < d; ++j) delta[i * d + j] += down[i * r + k] * up[k * d + j];

    // Numerical rank via Gaussian elimination with partial pivoting.
    size_t rank = 0;
    std::vector<double> m = delta;
    for (size_t col = 0; col < d && rank < d; ++col) {
        size_t pivot = rank;
        for (size_t row = rank; row < d; ++row)
            if (std::fabs(m[row * d + col]) > std::fabs(m[pivot * d + col])) pivot = row;
        if (std::fabs(m[pivot * d + col]) < 1e-9) continue;
        for (size_t j = 0; j < d; ++j) std::swap(m[rank * d + j], m[pivot * d + j]);
        for (size_t row = rank + 1; row < d; ++row) {
            double f = m[row * d + col] / m[rank * d + col];
            for (size_t j = 0; j < d; ++j) m[row * d + j] -= f * m[rank * d + j];
        }
        ++rank;
    }
    CHECK(rank <= st.config.r_lora);
    CHECK(rank >= 1);
}

TEST_CASE("merged weights reproduce the factored path") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 14);
    gradcheck::randomize_store(bb.store, 15);
    AdaptationConfig cfg = ma_config(2, true);
    AdaptationState st = init_adaptation(bb, cfg, 16);
    gradcheck::randomize_store(st.store, 17);
    // Keep only LoRA active so merge covers the whole difference.
    for (auto& [task, layers] : st.adapters)
        for (auto& l : layers) {
            std::fill_n(st.store.tensor(l.up), st.store.spec(l.up).numel(), 0.0);
        }

    BackboneParams merged = lora_merge(bb, st);
    CHECK(bb.checksum() != merged.checksum());

    double max_diff = 0.0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto ids = random_ids(12, mc.vocab_size, 200 + seed);
        ForwardTrace factored, plain;
        forward(bb, &st, ids, factored);
        forward(merged, nullptr, ids, plain);
        for (size_t i = 0; i < factored.logits.size(); ++i)
            max_diff = std::max(max_diff,
                                std::fabs(factored.logits[i] - plain.logits[i]));
    }
    CHECK(max_diff <= 1e-5);
}

TEST_CASE("merging a zero delta is the identity; merging twice adds twice") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 18);
    gradcheck::randomize_store(bb.store, 19);
    AdaptationState st = init_adaptation(bb, ma_config(), 20);

    BackboneParams merged = lora_merge(bb, st); // up factors still zero
    CHECK(merged.checksum() == bb.checksum());

    gradcheck::randomize_store(st.store, 21);
    BackboneParams once = lora_merge(bb, st);
    BackboneParams twice = lora_merge(once, st);
    CHECK(once.checksum() != twice.checksum());
    const double* w_base = bb.store.tensor(bb.layers[0].wq);
    const double* w_once = once.store.tensor(bb.layers[0].wq);
    const double* w_twice = twice.store.tensor(bb.layers[0].wq);
    for (size_t i = 0; i < 64; ++i) {
        double delta = w_once[i] - w_base[i];
        CHECK(w_twice[i] == doctest::Approx(w_base[i] + 2 * delta).epsilon(1e-12));
    }
}

TEST_CASE("select_task routes and rejects unknown tasks") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 22);
    gradcheck::randomize_store(bb.store, 23);

    AdaptationConfig one_task = ma_config();
    one_task.tasks = {Task::AsmToSrc};
    AdaptationState st = init_adaptation(bb, one_task, 24);
    CHECK_THROWS_AS(select_task(st, Task::SrcToAsm), std::out_of_range);
    AdaptationState sel = select_task(st, Task::AsmToSrc);
    CHECK(sel.active_task == Task::AsmToSrc);
    CHECK(sel.checksum() == st.checksum()); // no parameter values change

    // Distinct adapters route to distinct outputs.
    AdaptationState both = init_adaptation(bb, ma_config(), 25);
    gradcheck::randomize_store(both.store, 26);
    auto ids = random_ids(9, mc.vocab_size, 27);
    ForwardTrace a, b;
    forward(bb, &both, ids, a, nullptr, Task::AsmToSrc);
    forward(bb, &both, ids, b, nullptr, Task::SrcToAsm);
    CHECK(a.logits != b.logits);
}

TEST_CASE("S2S prefix swap changes the model's view of the same input") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 28);
    gradcheck::randomize_store(bb.store, 29);
    AdaptationState st = init_adaptation(bb, s2s_config(), 30);
    gradcheck::randomize_store(st.store, 31);

    // Same carrier position; routing decides which prefix vector lands there.
    std::vector<TokenId> ids = random_ids(8, mc.vocab_size, 32);
    ids[0] = Vocab::PREFIX_ASM2SRC;
    ForwardTrace a;
    forward(bb, &st, ids, a, nullptr, Task::AsmToSrc);
    ids[0] = Vocab::PREFIX_SRC2ASM;
    ForwardTrace b;
    forward(bb, &st, ids, b, nullptr, Task::SrcToAsm);
    CHECK(a.logits != b.logits);
}

TEST_CASE("MA states carry no prefixes and S2S states no adapters") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 33);
    AdaptationState ma = init_adaptation(bb, ma_config(), 34);
    CHECK(ma.prefixes.empty());
    CHECK(ma.adapters.size() == 2);
    AdaptationState s2s = init_adaptation(bb, s2s_config(), 35);
    CHECK(s2s.adapters.empty());
    CHECK(s2s.prefixes.size() == 2);
}

TEST_CASE("adapter mixing with full weight on one task matches routing") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 36);
    gradcheck::randomize_store(bb.store, 37);
    AdaptationState st = init_adaptation(bb, ma_config(), 38);
    gradcheck::randomize_store(st.store, 39);

    auto ids = random_ids(7, mc.vocab_size, 40);
    ForwardTrace routed;
    forward(bb, &st, ids, routed, nullptr, Task::AsmToSrc);

    AdaptationState mixed = st;
    mixed.mix_weights = {{Task::AsmToSrc, 1.0}};
    ForwardTrace via_mix;
    forward(bb, &mixed, ids, via_mix);
    for (size_t i = 0; i < routed.logits.size(); ++i)
        CHECK(via_mix.logits[i] == doctest::Approx(routed.logits[i]).epsilon(1e-12));
}

TEST_CASE("adaptation checkpoints round-trip") {
    test_support::TempDir dir;
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 41);
    AdaptationState st = init_adaptation(bb, s2s_config(true, 2), 42);
    gradcheck::randomize_store(st.store, 43);

    std::string path = dir.file("adapt.ckpt");
    save_adaptation(path, st);
    AdaptationState loaded = load_adaptation(path);
    CHECK(loaded.checksum() == st.checksum());
    CHECK(loaded.config.strategy == Strategy::Seq2SeqUnified);
    CHECK(loaded.config.n_prefix == 2);
    CHECK(loaded.model_config == mc);
    CHECK(loaded.prefixes.size() == 2);
}

TEST_CASE("adapter, LoRA, and prefix gradients match finite differences (sampled)") {
    ModelConfig mc = adapt_model_config();

    for (auto cfg : {ma_config(), s2s_config()}) {
        gradcheck::Case c{BackboneParams::init(mc, 44), nullptr, {}, {}, {}};
        gradcheck::randomize_store(c.backbone.store, 45);
        AdaptationState st = init_adaptation(c.backbone, cfg, 46);
        gradcheck::randomize_store(st.store, 47);
        c.adapt = &st;
        c.route = Task::SrcToAsm;
        c.ids = random_ids(9, mc.vocab_size, 48);
        c.ids[0] = Vocab::prefix_id_for(Task::SrcToAsm);
        gradcheck::fill_targets(c, 48);

        auto res = gradcheck::check_store(c, true, /*stride=*/3);
        CAPTURE(strategy_name(cfg.strategy));
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-3);
    }
}

TEST_CASE("adaptation init validates its configuration") {
    ModelConfig mc = adapt_model_config();
    BackboneParams bb = BackboneParams::init(mc, 49);
    AdaptationConfig bad = ma_config(8); // r_adapter == d_model
    CHECK_THROWS(init_adaptation(bb, bad, 50));
    AdaptationConfig no_tasks = ma_config(2);
    no_tasks.tasks.clear();
    CHECK_THROWS(init_adaptation(bb, no_tasks, 51));
}
