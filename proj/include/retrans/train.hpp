// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "retrans/format.hpp"
#include "retrans/model.hpp"

namespace retrans {

struct TrainConfig {
    size_t batch_size = 8;        // per micro-batch
    size_t grad_accum_steps = 8;  // effective batch = batch_size * accum
    double learning_rate = 2e-4;
    size_t max_steps = 0;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    enum class Trainable { FullBackbone, AdaptationOnly } trainable = Trainable::FullBackbone;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    size_t warmup_steps = 0;    // optional linear warmup to learning_rate
    size_t checkpoint_every = 0; // invoke the checkpoint hook every N steps (0 = off)
    double max_grad_norm = 0.0; // 0 disables clipping
    size_t threads = 1;         // micro-batch parallelism, order-stable reduction

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Invoked after `completed_steps` optimizer steps whenever checkpoint_every
// divides it; parameters are in their current trained state at call time.
using CheckpointHook = std::function<void(size_t completed_steps)>;

// Decoupled-weight-decay adaptive moment optimizer. Moments and step counts
// are tracked per tensor so that parameter groups first touched late in
// training still get correct bias correction.
class AdamW {
public:
    explicit AdamW(size_t n_params, size_t n_tensors)
        : m_(n_params, 0.0), v_(n_params, 0.0), steps_(n_tensors, 0) {}

    // Applies one update to the tensors listed in `active` (spec indices
    // into `store`). grads must use the store's layout; lr is the schedule-
    // resolved rate for this step. Deterministic.
    void step(ParamStore& store, const double* grads, const std::vector<size_t>& active,
              double lr, const TrainConfig& cfg);

private:
    std::vector<double> m_, v_;
    std::vector<uint64_t> steps_;
};

struct TrainResult {
    std::vector<double> loss_history; // one entry per optimizer step
};

// Causal-LM pretraining over raw token streams. Loss covers every next-token
// position. Deterministic given cfg.seed (and a fixed thread count). Throws
// on an empty corpus, over-length streams, a frozen backbone, or NaN loss.
TrainResult pretrain_clm(BackboneParams& backbone, const std::vector<TokenStream>& corpus,
                         const TrainConfig& cfg, const CheckpointHook& on_checkpoint = {});

// Supervised fine-tuning of adaptation parameters over paired samples; the
// backbone is read-only throughout. Loss covers only output-segment targets.
// MA routes each sample through its task's adapter; S2S prepends the task
// prefix. Requires cfg.trainable == AdaptationOnly, every sample within the
// length filter, and an adapter/prefix for every sample task.
TrainResult finetune(const BackboneParams& backbone, AdaptationState& state,
                     const std::vector<Sample>& data, const Vocab& vocab,
                     const TrainConfig& cfg, const CheckpointHook& on_checkpoint = {});

void write_loss_csv(const std::string& path, const std::vector<double>& history,
                    const TrainConfig& cfg);

} // namespace retrans
