// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retrans/adaptation.hpp"
#include "retrans/params.hpp"
#include "retrans/tokenizer.hpp"

namespace retrans {

class Rng;

// Spec indices into the backbone store, one set per transformer block.
struct LayerParams {
    size_t ln1_g, ln1_b;
    size_t wq, bq, wk, bk, wv, bv, wo, bo;
    size_t ln2_g, ln2_b;
    size_t w1, b1, w2, b2;
};

// Decoder-only causal transformer: learned absolute positions, pre-norm
// blocks, GELU feed-forward, untied zero-initialized output head unless
// tie_embeddings is set.
struct BackboneParams {
    ModelConfig config;
    ParamStore store;
    std::vector<LayerParams> layers;
    size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, head = 0;
    bool frozen = false; // when set, trainers must refuse to update the store

    static BackboneParams init(const ModelConfig& cfg, uint64_t seed);
    std::string checksum() const { return store.checksum(); }
};

// Activation cache captured by forward() for backward(). Also exposes the
// final hidden states used as contextual embeddings by the evaluator.
struct ForwardTrace {
    size_t L = 0;

    std::vector<double> x0; // embeddings entering layer 0
    struct Layer {
        std::vector<double> ln1_out, ln1_mean, ln1_rstd;
        std::vector<double> q, k, v;       // post-projection, L x d
        std::vector<double> probs;         // n_heads x L x L causal softmax
        std::vector<double> ctx;           // attention context, L x d
        std::vector<double> x1;            // after attention residual
        std::vector<double> ln2_out, ln2_mean, ln2_rstd;
        std::vector<double> ff_pre;        // L x d_ff, pre-GELU
        std::vector<double> ff_act;        // L x d_ff, post-GELU
        std::vector<double> ff_out;        // L x d, pre-adapter
        std::vector<double> adapter_pre;   // L x r_adapter (active adapter)
        std::vector<double> x2;            // block output
        // LoRA bottleneck activations (input x down), L x r_lora each.
        std::vector<double> lq, lk, lv, lo, l1, l2;
    };
    std::vector<Layer> layers;
    std::vector<double> lnf_out, lnf_mean, lnf_rstd;
    std::vector<double> final_hidden; // alias of lnf_out kept for clarity
    std::vector<double> logits;       // L x vocab_size

    std::vector<std::pair<size_t, size_t>> prefix_positions; // (pos, occurrence)
    Task routed_task = Task::AsmToSrc; // task this trace was routed through

    // Inverted-dropout multipliers, populated only when dropout is active.
    std::vector<double> drop_x0;
    std::vector<std::vector<double>> drop_attn, drop_ff;
};

// Runs the decoder over `ids`. With adapt == nullptr the logits are the pure
// backbone function of its parameters. Position k's logits depend only on
// tokens at positions <= k. Throws on over-length input or out-of-range IDs.
//
// When config.dropout > 0 and dropout_rng is non-null (training path),
// inverted dropout is applied to the embedding sum and to both sublayer
// outputs; inference callers pass no rng and always run deterministically.
//
// `route` overrides the adaptation state's active_task for this pass;
// routing is a pure function of (state, task), so concurrent passes with
// different routes never interfere.
void forward(const BackboneParams& backbone, const AdaptationState* adapt,
             std::span<const TokenId> ids, ForwardTrace& trace,
             Rng* dropout_rng = nullptr, std::optional<Task> route = std::nullopt);

// Mean negative log-likelihood over unmasked positions. logits is L x V,
// targets has length L, mask marks contributing positions. Throws when every
// position is masked.
double clm_loss(const double* logits, size_t L, size_t V,
                std::span<const TokenId> targets, std::span<const uint8_t> mask);

// d(loss)/d(logits), scaled by `scale`; masked rows get exactly zero.
void clm_loss_backward(const double* logits, size_t L, size_t V,
                       std::span<const TokenId> targets, std::span<const uint8_t> mask,
                       double scale, double* dlogits);

// Backpropagates dlogits (exactly trace.L x vocab elements) through the
// traced forward pass. Gradient sinks are optional: pass nullptr to skip
// accumulating that side (values are still chained through). Buffers must
// match the respective store sizes and are accumulated into (+=).
void backward(const BackboneParams& backbone, const AdaptationState* adapt,
              std::span<const TokenId> ids, const ForwardTrace& trace,
              std::span<const double> dlogits, double* backbone_grads,
              double* adapt_grads);

enum class DecodeMode { Greedy, Sampled };

struct GenOptions {
    DecodeMode mode = DecodeMode::Greedy;
    uint64_t seed = 0;         // Sampled only
    double temperature = 1.0;  // Sampled only
    size_t max_new = 0;
    std::optional<Task> route; // task override, as in forward()
};

struct GenResult {
    std::vector<TokenId> ids;       // prompt followed by generated tokens
    std::vector<double> logprobs;   // log P of each generated token
    size_t prompt_len = 0;
};

// Autoregressive decoding; stops at EOS or after max_new tokens. Greedy is
// deterministic (ties break toward the lowest ID); Sampled is deterministic
// given the seed. Throws if prompt length + max_new exceeds max_context.
GenResult generate(const BackboneParams& backbone, const AdaptationState* adapt,
                   std::span<const TokenId> prompt, const GenOptions& opts);

// Teacher-forced log P(ids[from..] | ids[..from)) in one forward pass.
double sequence_logprob(const BackboneParams& backbone, const AdaptationState* adapt,
                        std::span<const TokenId> ids, size_t from,
                        std::optional<Task> route = std::nullopt);

// exp(mean token NLL) over the corpus, every predicted token weighted
// equally (position k >= 1 of each stream). `routes`, when given, supplies a
// per-stream task override (mixed-task corpora under MA/S2S adaptation).
// Throws on an empty corpus or when no stream has at least two tokens.
double perplexity(const BackboneParams& backbone, const AdaptationState* adapt,
                  const std::vector<TokenStream>& corpus,
                  const std::vector<Task>* routes = nullptr);

// Backbone checkpoints embed the vocabulary so a model file is self-
// contained. Loading validates shapes and rejects mismatches.
void save_backbone(const std::string& path, const BackboneParams& backbone,
                   const Vocab& vocab);
struct LoadedBackbone {
    BackboneParams backbone;
    Vocab vocab;
};
LoadedBackbone load_backbone(const std::string& path);

} // namespace retrans
