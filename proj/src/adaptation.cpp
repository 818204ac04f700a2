// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/adaptation.hpp"

#include <stdexcept>

#include "retrans/model.hpp"
#include "retrans/rng.hpp"
#include "retrans/tensor.hpp"

namespace retrans {

using nlohmann::json;

const char* strategy_name(Strategy s) {
    return s == Strategy::MultiAdapter ? "ma" : "s2s";
}

Strategy parse_strategy(const std::string& s) {
    if (s == "ma") return Strategy::MultiAdapter;
    if (s == "s2s") return Strategy::Seq2SeqUnified;
    throw std::invalid_argument("unknown strategy \"" + s + "\" (expected ma or s2s)");
}

json AdaptationConfig::to_json() const {
    json tasks_j = json::array();
    for (Task t : tasks) tasks_j.push_back(task_name(t));
    return json{{"strategy", strategy_name(strategy)},
                {"r_adapter", r_adapter},
                {"use_lora", use_lora},
                {"r_lora", r_lora},
                {"lora_alpha", lora_alpha},
                {"n_prefix", n_prefix},
                {"tasks", tasks_j}};
}

AdaptationConfig AdaptationConfig::from_json(const json& j) {
    AdaptationConfig c;
    c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.r_adapter = j.value("r_adapter", size_t(8));
    c.use_lora = j.value("use_lora", true);
    c.r_lora = j.value("r_lora", size_t(4));
    c.lora_alpha = j.value("lora_alpha", 0.0);
    c.n_prefix = j.value("n_prefix", size_t(1));
    c.tasks.clear();
    for (const auto& t : j.at("tasks")) {
        auto parsed = parse_task(t.get<std::string>());
        if (!parsed) throw std::invalid_argument("unknown task in adaptation config");
        c.tasks.push_back(*parsed);
    }
    return c;
}

bool AdaptationState::has_task(Task t) const {
    return config.strategy == Strategy::MultiAdapter ? adapters.count(t) > 0
                                                     : prefixes.count(t) > 0;
}

std::vector<size_t> AdaptationState::task_specs(Task t) const {
    std::vector<size_t> out;
    if (auto it = adapters.find(t); it != adapters.end()) {
        for (const auto& layer : it->second) {
            out.push_back(layer.down);
            out.push_back(layer.up);
        }
    }
    if (auto it = prefixes.find(t); it != prefixes.end()) out.push_back(it->second);
    return out;
}

std::vector<size_t> AdaptationState::shared_specs() const {
    std::vector<size_t> out;
    for (const auto& layer : lora) {
        for (const LoraPair* p : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1,
                                  &layer.w2}) {
            out.push_back(p->down);
            out.push_back(p->up);
        }
    }
    return out;
}

AdaptationState init_adaptation(const BackboneParams& backbone,
                                const AdaptationConfig& cfg, uint64_t seed) {
    const ModelConfig& mc = backbone.config;
    if (cfg.tasks.empty()) throw std::invalid_argument("adaptation needs at least one task");
    if (cfg.strategy == Strategy::MultiAdapter && cfg.r_adapter >= mc.d_model)
        throw std::invalid_argument("r_adapter must be smaller than d_model");
    if (cfg.use_lora && cfg.r_lora == 0)
        throw std::invalid_argument("r_lora must be positive when LoRA is enabled");
    if (cfg.strategy == Strategy::Seq2SeqUnified && cfg.n_prefix == 0)
        throw std::invalid_argument("n_prefix must be positive for the S2S strategy");

    AdaptationState st;
    st.config = cfg;
    st.model_config = mc;
    st.active_task = cfg.tasks.front();
    Rng rng(seed);

    auto fill_normal = [&](size_t idx, double std_dev) {
        double* p = st.store.tensor(idx);
        size_t n = st.store.spec(idx).numel();
        for (size_t i = 0; i < n; ++i) p[i] = rng.next_gaussian() * std_dev;
    };

    if (cfg.strategy == Strategy::MultiAdapter) {
        for (Task t : cfg.tasks) {
            std::vector<AdapterLayerIdx> layers;
            for (size_t l = 0; l < mc.n_layers; ++l) {
                std::string p = std::string("adapter.") + task_name(t) + ".layer" +
                                std::to_string(l) + ".";
                AdapterLayerIdx idx;
                idx.down = st.store.add(p + "down", mc.d_model, cfg.r_adapter);
                idx.up = st.store.add(p + "up", cfg.r_adapter, mc.d_model);
                fill_normal(idx.down, 0.02);
                // up stays zero: the adapter is an exact identity at init.
                layers.push_back(idx);
            }
            st.adapters.emplace(t, std::move(layers));
        }
    } else {
        for (Task t : cfg.tasks) {
            std::string name = std::string("prefix.") + task_name(t);
            size_t idx = st.store.add(name, cfg.n_prefix, mc.d_model);
            // Each prefix vector starts as a copy of its carrier token's
            // embedding, so substitution changes nothing before training.
            const double* carrier =
                backbone.store.tensor(backbone.tok_emb) +
                size_t(Vocab::prefix_id_for(t)) * mc.d_model;
            double* dst = st.store.tensor(idx);
            for (size_t k = 0; k < cfg.n_prefix; ++k)
                std::copy(carrier, carrier + mc.d_model, dst + k * mc.d_model);
            st.prefixes.emplace(t, idx);
        }
    }

    if (cfg.use_lora) {
        for (size_t l = 0; l < mc.n_layers; ++l) {
            std::string p = "lora.layer" + std::to_string(l) + ".";
            auto add_pair = [&](const std::string& proj, size_t d_in,
                                size_t d_out) -> LoraPair {
                LoraPair pair;
                pair.down = st.store.add(p + proj + ".down", d_in, cfg.r_lora);
                pair.up = st.store.add(p + proj + ".up", cfg.r_lora, d_out);
                fill_normal(pair.down, 0.02);
                // up stays zero: delta W == 0 at init.
                return pair;
            };
            LoraLayerIdx idx;
            idx.wq = add_pair("wq", mc.d_model, mc.d_model);
            idx.wk = add_pair("wk", mc.d_model, mc.d_model);
            idx.wv = add_pair("wv", mc.d_model, mc.d_model);
            idx.wo = add_pair("wo", mc.d_model, mc.d_model);
            idx.w1 = add_pair("w1", mc.d_model, mc.d_ff);
            idx.w2 = add_pair("w2", mc.d_ff, mc.d_model);
            st.lora.push_back(idx);
        }
    }
    return st;
}

AdaptationState select_task(const AdaptationState& state, Task task) {
    if (!state.has_task(task))
        throw std::out_of_range(std::string("adaptation state has no ") +
                                (state.config.strategy == Strategy::MultiAdapter
                                     ? "adapter"
                                     : "prefix") +
                                " for task " + task_name(task));
    AdaptationState out = state;
    out.active_task = task;
    return out;
}

std::vector<double> adapter_apply(const std::vector<double>& h,
                                  const AdaptationState& state, Task task,
                                  size_t layer) {
    auto it = state.adapters.find(task);
    if (it == state.adapters.end())
        throw std::out_of_range(std::string("no adapter for task ") + task_name(task));
    if (layer >= it->second.size()) throw std::out_of_range("adapter layer out of range");
    size_t d = state.model_config.d_model;
    size_t r = state.config.r_adapter;
    if (h.size() != d) throw std::invalid_argument("adapter_apply: h must have length d_model");

    const auto& idx = it->second[layer];
    std::vector<double> mid(r, 0.0);
    mm(mid.data(), h.data(), state.store.tensor(idx.down), 1, d, r, false);
    for (double& v : mid) v = v > 0.0 ? v : 0.0;
    std::vector<double> out(h);
    mm(out.data(), mid.data(), state.store.tensor(idx.up), 1, r, d, true);
    return out;
}

std::vector<double> lora_apply(const std::vector<double>& x, const double* W,
                               size_t d_in, size_t d_out,
                               const AdaptationState& state, const LoraPair& pair) {
    if (x.size() != d_in) throw std::invalid_argument("lora_apply: x must have length d_in");
    std::vector<double> out(d_out, 0.0);
    mm(out.data(), x.data(), W, 1, d_in, d_out, false);
    size_t r = state.config.r_lora;
    std::vector<double> mid(r, 0.0);
    mm(mid.data(), x.data(), state.store.tensor(pair.down), 1, d_in, r, false);
    double s = state.lora_scaling();
    for (double& v : mid) v *= s;
    mm(out.data(), mid.data(), state.store.tensor(pair.up), 1, r, d_out, true);
    return out;
}

BackboneParams lora_merge(const BackboneParams& base, const AdaptationState& state) {
    if (state.model_config != base.config)
        throw std::invalid_argument("lora_merge: adaptation state shape mismatch");
    BackboneParams merged = base;
    if (state.lora.empty()) return merged;

    double s = state.lora_scaling();
    size_t r = state.config.r_lora;
    for (size_t l = 0; l < base.layers.size(); ++l) {
        const auto& lp = base.layers[l];
        const auto& lo = state.lora[l];
        struct Entry {
            size_t w_idx;
            const LoraPair* pair;
            size_t d_in, d_out;
        };
        const Entry entries[] = {
            {lp.wq, &lo.wq, base.config.d_model, base.config.d_model},
            {lp.wk, &lo.wk, base.config.d_model, base.config.d_model},
            {lp.wv, &lo.wv, base.config.d_model, base.config.d_model},
            {lp.wo, &lo.wo, base.config.d_model, base.config.d_model},
            {lp.w1, &lo.w1, base.config.d_model, base.config.d_ff},
            {lp.w2, &lo.w2, base.config.d_ff, base.config.d_model},
        };
        for (const auto& e : entries) {
            // W += s * down * up
            std::vector<double> down_s(state.store.tensor(e.pair->down),
                                       state.store.tensor(e.pair->down) + e.d_in * r);
            for (double& v : down_s) v *= s;
            mm(merged.store.tensor(e.w_idx), down_s.data(),
               state.store.tensor(e.pair->up), e.d_in, r, e.d_out, true);
        }
    }
    return merged;
}

void save_adaptation(const std::string& path, const AdaptationState& state) {
    json header;
    header["kind"] = "adaptation";
    header["model_config"] = state.model_config.to_json();
    header["adaptation_config"] = state.config.to_json();
    save_container(path, header, state.store);
}

AdaptationState load_adaptation(const std::string& path) {
    auto loaded = load_container(path);
    if (loaded.header.value("kind", "") != "adaptation")
        throw std::runtime_error(path + ": not an adaptation checkpoint");
    ModelConfig mc = ModelConfig::from_json(loaded.header.at("model_config"));
    AdaptationConfig cfg = AdaptationConfig::from_json(loaded.header.at("adaptation_config"));

    // Rebuild the layout, then overwrite with stored data. The throwaway
    // backbone only donates prefix init values, which restore() replaces.
    BackboneParams scratch = BackboneParams::init(mc, 0);
    AdaptationState st = init_adaptation(scratch, cfg, 0);
    restore_store(st.store, loaded.header, loaded.data);
    return st;
}

} // namespace retrans
