// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "retrans/params.hpp"
#include "retrans/task.hpp"

namespace retrans {

struct BackboneParams;

// Two task-adaptation strategies over a frozen backbone: per-task residual
// adapters (MultiAdapter) or learned per-task prefix embeddings
// (Seq2SeqUnified). LoRA low-rank deltas on the attention and feed-forward
// projections are available under both.
enum class Strategy { MultiAdapter, Seq2SeqUnified };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s); // "ma" | "s2s"

struct AdaptationConfig {
    Strategy strategy = Strategy::MultiAdapter;
    size_t r_adapter = 8;  // adapter bottleneck, must stay < d_model
    bool use_lora = true;
    size_t r_lora = 4;
    double lora_alpha = 0.0; // 0 means alpha = r_lora, i.e. scaling 1
    size_t n_prefix = 1;     // prefix vectors per task (S2S)
    std::vector<Task> tasks = {Task::AsmToSrc, Task::SrcToAsm};

    nlohmann::json to_json() const;
    static AdaptationConfig from_json(const nlohmann::json& j);
};

// Index pairs into the adaptation ParamStore.
struct AdapterLayerIdx {
    size_t down; // d_model x r_adapter
    size_t up;   // r_adapter x d_model, zero-initialized
};
struct LoraPair {
    size_t down; // d_in x r_lora
    size_t up;   // r_lora x d_out, zero-initialized
};
struct LoraLayerIdx {
    LoraPair wq, wk, wv, wo, w1, w2;
};

// All adaptation parameters for one strategy, one flat store. MultiAdapter
// states carry adapters and no prefixes; Seq2SeqUnified states carry
// prefixes and no adapters. active_task selects the routed adapter/prefix.
struct AdaptationState {
    AdaptationConfig config;
    ModelConfig model_config;
    ParamStore store;
    Task active_task = Task::AsmToSrc;

    std::map<Task, std::vector<AdapterLayerIdx>> adapters;
    std::vector<LoraLayerIdx> lora; // empty when LoRA is disabled
    std::map<Task, size_t> prefixes; // spec index of the n_prefix x d_model block

    // Optional convex adapter mixing at inference (MultiAdapter only);
    // empty map = single-task routing.
    std::map<Task, double> mix_weights;

    double lora_scaling() const {
        return config.lora_alpha == 0.0 ? 1.0 : config.lora_alpha / double(config.r_lora);
    }
    bool has_task(Task t) const;
    std::string checksum() const { return store.checksum(); }

    // Parameter groups for the optimizer: tensors owned by one task's
    // adapter/prefix, and the shared LoRA tensors.
    std::vector<size_t> task_specs(Task t) const;
    std::vector<size_t> shared_specs() const;
};

// Builds a fresh state. Adapter/LoRA down-projections are random, their up
// factors zero, and prefix vectors copy the backbone embedding of their
// carrier token, so an untrained state is an exact identity over the bare
// backbone.
AdaptationState init_adaptation(const BackboneParams& backbone,
                                const AdaptationConfig& cfg, uint64_t seed);

// Returns a copy with active_task set. Throws std::out_of_range when the
// state has no adapter (MA) or prefix (S2S) for the task.
AdaptationState select_task(const AdaptationState& state, Task task);

// h + up(relu(down(h))) for one layer of the task's adapter; row-vector
// convention, pure function.
std::vector<double> adapter_apply(const std::vector<double>& h,
                                  const AdaptationState& state, Task task,
                                  size_t layer);

// x*W + scaling * (x*down)*up. W is d_in x d_out row-major; never mutated.
std::vector<double> lora_apply(const std::vector<double>& x, const double* W,
                               size_t d_in, size_t d_out,
                               const AdaptationState& state, const LoraPair& pair);

// New backbone with every LoRA delta folded in (W' = W + scaling*down*up).
// The input backbone is unchanged. Merging twice adds the delta twice.
BackboneParams lora_merge(const BackboneParams& base, const AdaptationState& state);

void save_adaptation(const std::string& path, const AdaptationState& state);
AdaptationState load_adaptation(const std::string& path);

} // namespace retrans
