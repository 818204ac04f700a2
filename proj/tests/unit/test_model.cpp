// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "retrans/model.hpp"
#include "retrans/rng.hpp"

#include "../gradcheck.hpp"
#include "../support.hpp"

using namespace retrans;

namespace {

BackboneParams small_model(uint64_t seed = 1, size_t vocab = 300) {
    return BackboneParams::init(gradcheck::tiny_config(vocab, 16, 2, 2, 32, 64), seed);
}

std::vector<TokenId> random_ids(size_t n, size_t vocab, uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenId> ids;
    for (size_t i = 0; i < n; ++i) ids.push_back(TokenId(rng.next_below(vocab)));
    return ids;
}

} // namespace

TEST_CASE("a fresh model emits uniform logits at every position") {
    BackboneParams bb = small_model();
    auto ids = random_ids(12, bb.config.vocab_size, 3);
    ForwardTrace trace;
    forward(bb, nullptr, ids, trace);
    for (size_t p = 0; p < ids.size(); ++p)
        for (size_t v = 0; v < bb.config.vocab_size; ++v)
            CHECK(trace.logits[p * bb.config.vocab_size + v] == 0.0);
}

TEST_CASE("uniform logits give ln(V) loss and V perplexity") {
    BackboneParams bb = small_model();
    size_t V = bb.config.vocab_size;
    auto ids = random_ids(10, V, 4);
    ForwardTrace trace;
    forward(bb, nullptr, ids, trace);
    std::vector<TokenId> targets(ids.begin() + 1, ids.end());
    std::vector<uint8_t> mask(targets.size(), 1);
    double loss = clm_loss(trace.logits.data(), targets.size(), V, targets, mask);
    CHECK(loss == doctest::Approx(std::log(double(V))).epsilon(1e-9));

    TokenStream s;
    s.ids = ids;
    double ppl = perplexity(bb, nullptr, {s});
    CHECK(std::fabs(ppl - double(V)) / double(V) < 1e-4);
}

TEST_CASE("single-symbol vocabulary gives zero loss and perplexity one") {
    ModelConfig cfg = gradcheck::tiny_config(1, 8, 1, 2, 16, 16);
    BackboneParams bb = BackboneParams::init(cfg, 9);
    std::vector<TokenId> ids(5, 0);
    ForwardTrace trace;
    forward(bb, nullptr, ids, trace);
    std::vector<TokenId> targets(4, 0);
    std::vector<uint8_t> mask(4, 1);
    CHECK(clm_loss(trace.logits.data(), 4, 1, targets, mask) == 0.0);
    TokenStream s;
    s.ids = ids;
    CHECK(perplexity(bb, nullptr, {s}) == 1.0);
}

TEST_CASE("loss approaches zero when logits concentrate on the targets") {
    std::vector<TokenId> targets = {2, 0, 1};
    std::vector<uint8_t> mask(3, 1);
    std::vector<double> logits(3 * 3, 0.0);
    for (size_t i = 0; i < 3; ++i) logits[i * 3 + size_t(targets[i])] = 200.0;
    CHECK(clm_loss(logits.data(), 3, 3, targets, mask) < 1e-12);
    CHECK(clm_loss(logits.data(), 3, 3, targets, mask) >= 0.0);
}

TEST_CASE("clm_loss rejects an all-masked input") {
    std::vector<double> logits(4, 0.0);
    std::vector<TokenId> targets = {0, 1};
    std::vector<uint8_t> mask = {0, 0};
    CHECK_THROWS(clm_loss(logits.data(), 2, 2, targets, mask));
}

TEST_CASE("forward is deterministic") {
    BackboneParams bb = small_model(11);
    gradcheck::randomize_store(bb.store, 12);
    auto ids = random_ids(20, bb.config.vocab_size, 13);
    ForwardTrace a, b;
    forward(bb, nullptr, ids, a);
    forward(bb, nullptr, ids, b);
    CHECK(a.logits == b.logits);
}

TEST_CASE("causal mask: perturbing token j leaves logits before j unchanged") {
    BackboneParams bb = small_model(21);
    gradcheck::randomize_store(bb.store, 22);
    size_t V = bb.config.vocab_size;
    auto ids = random_ids(16, V, 23);
    ForwardTrace base;
    forward(bb, nullptr, ids, base);

    for (size_t j : {size_t(4), size_t(10), size_t(15)}) {
        auto perturbed = ids;
        perturbed[j] = TokenId((perturbed[j] + 1) % TokenId(V));
        ForwardTrace t;
        forward(bb, nullptr, perturbed, t);
        for (size_t p = 0; p < j; ++p)
            for (size_t v = 0; v < V; ++v)
                CHECK(t.logits[p * V + v] == base.logits[p * V + v]);
        bool changed = false;
        for (size_t v = 0; v < V; ++v)
            changed |= t.logits[j * V + v] != base.logits[j * V + v];
        CHECK(changed);
    }
}

TEST_CASE("per-position probabilities sum to one") {
    BackboneParams bb = small_model(31);
    gradcheck::randomize_store(bb.store, 32);
    size_t V = bb.config.vocab_size;
    auto ids = random_ids(8, V, 33);
    ForwardTrace trace;
    forward(bb, nullptr, ids, trace);
    for (size_t p = 0; p < ids.size(); ++p) {
        const double* row = trace.logits.data() + p * V;
        double maxv = row[0];
        for (size_t v = 1; v < V; ++v) maxv = std::max(maxv, row[v]);
        double sum = 0.0;
        for (size_t v = 0; v < V; ++v) sum += std::exp(row[v] - maxv);
        double total = 0.0;
        for (size_t v = 0; v < V; ++v) total += std::exp(row[v] - maxv) / sum;
        CHECK(std::fabs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("forward validates lengths and ids") {
    BackboneParams bb = small_model(41);
    ForwardTrace trace;
    auto long_ids = random_ids(bb.config.max_context + 1, bb.config.vocab_size, 42);
    CHECK_THROWS(forward(bb, nullptr, long_ids, trace));
    std::vector<TokenId> bad = {TokenId(bb.config.vocab_size)};
    CHECK_THROWS(forward(bb, nullptr, bad, trace));
}

TEST_CASE("backbone gradients match finite differences (sampled)") {
    auto c = gradcheck::make_backbone_case(55);
    auto res = gradcheck::check_store(c, false, /*stride=*/7);
    CAPTURE(res.worst_tensor);
    CHECK(res.max_rel_err < 1e-3);
    CHECK(res.checked > 100);
}

TEST_CASE("tied embeddings reuse the token table as the output head") {
    ModelConfig cfg = gradcheck::tiny_config(13);
    cfg.tie_embeddings = true;
    BackboneParams bb = BackboneParams::init(cfg, 7);
    CHECK(!bb.store.find("head").has_value());
    gradcheck::Case c{std::move(bb), nullptr, {}, {}, {}};
    gradcheck::randomize_store(c.backbone.store, 8);
    c.ids = random_ids(7, 13, 9);
    gradcheck::fill_targets(c, 9);
    auto res = gradcheck::check_store(c, false, /*stride=*/5);
    CAPTURE(res.worst_tensor);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("greedy generation is deterministic and honors max_new") {
    BackboneParams bb = small_model(61);
    gradcheck::randomize_store(bb.store, 62);
    auto prompt = random_ids(5, bb.config.vocab_size, 63);

    GenOptions zero;
    zero.max_new = 0;
    GenResult r0 = generate(bb, nullptr, prompt, zero);
    CHECK(r0.ids == prompt);
    CHECK(r0.logprobs.empty());

    GenOptions opts;
    opts.max_new = 12;
    GenResult a = generate(bb, nullptr, prompt, opts);
    GenResult b = generate(bb, nullptr, prompt, opts);
    CHECK(a.ids == b.ids);
    CHECK(a.logprobs == b.logprobs);
    CHECK(a.ids.size() <= prompt.size() + 12);

    GenOptions sampled;
    sampled.mode = DecodeMode::Sampled;
    sampled.seed = 99;
    sampled.temperature = 0.8;
    sampled.max_new = 12;
    GenResult s1 = generate(bb, nullptr, prompt, sampled);
    GenResult s2 = generate(bb, nullptr, prompt, sampled);
    CHECK(s1.ids == s2.ids);

    GenOptions overflow;
    overflow.max_new = bb.config.max_context;
    CHECK_THROWS(generate(bb, nullptr, prompt, overflow));
}

TEST_CASE("stepwise generation log-probs match one teacher-forced pass") {
    BackboneParams bb = small_model(71);
    gradcheck::randomize_store(bb.store, 72);
    auto prompt = random_ids(6, bb.config.vocab_size, 73);
    GenOptions opts;
    opts.max_new = 10;
    GenResult gen = generate(bb, nullptr, prompt, opts);
    REQUIRE(gen.ids.size() > prompt.size());

    double stepwise = 0.0;
    for (double lp : gen.logprobs) stepwise += lp;
    double teacher = sequence_logprob(bb, nullptr, gen.ids, prompt.size());
    CHECK(std::fabs(stepwise - teacher) < 1e-9);
}

TEST_CASE("checkpoints round-trip and reject shape mismatches") {
    test_support::TempDir dir;
    BackboneParams bb = small_model(81);
    gradcheck::randomize_store(bb.store, 82);
    Vocab vocab = Vocab::build(std::vector<std::string>{}, bb.config.max_context, "test");
    // The small test model uses a synthetic vocab size; align config to it.
    REQUIRE(vocab.size() != bb.config.vocab_size); // sanity: mismatch detected below
    std::string path = dir.file("model.ckpt");
    CHECK_THROWS(save_backbone(path, bb, vocab));
}

TEST_CASE("checkpoint save/load preserves parameters exactly") {
    test_support::TempDir dir;
    Vocab vocab = Vocab::build_default(64);
    ModelConfig cfg = gradcheck::tiny_config(vocab.size(), 16, 1, 2, 32, 64);
    BackboneParams bb = BackboneParams::init(cfg, 91);
    gradcheck::randomize_store(bb.store, 92);
    std::string path = dir.file("model.ckpt");
    save_backbone(path, bb, vocab);

    LoadedBackbone loaded = load_backbone(path);
    CHECK(loaded.backbone.checksum() == bb.checksum());
    CHECK(loaded.vocab == vocab);

    auto ids = random_ids(9, cfg.vocab_size, 93);
    ForwardTrace a, b;
    forward(bb, nullptr, ids, a);
    forward(loaded.backbone, nullptr, ids, b);
    CHECK(a.logits == b.logits);

    CHECK_THROWS(load_backbone(dir.file("missing.ckpt")));
}

TEST_CASE("dropout is seeded, scaled, and off at inference") {
    ModelConfig cfg = gradcheck::tiny_config(13);
    cfg.dropout = 0.3;
    BackboneParams bb = BackboneParams::init(cfg, 101);
    gradcheck::randomize_store(bb.store, 102);
    auto ids = random_ids(8, 13, 103);

    ForwardTrace a, b, c, plain;
    Rng r1(5), r2(5), r3(6);
    forward(bb, nullptr, ids, a, &r1);
    forward(bb, nullptr, ids, b, &r2);
    forward(bb, nullptr, ids, c, &r3);
    forward(bb, nullptr, ids, plain); // no rng: inference path, no dropout
    CHECK(a.logits == b.logits);
    CHECK(a.logits != c.logits);
    CHECK(plain.drop_x0.empty());
}
