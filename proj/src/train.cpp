// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "retrans/rng.hpp"

namespace retrans {

using nlohmann::json;

json TrainConfig::to_json() const {
    return json{{"batch_size", batch_size},
                {"grad_accum_steps", grad_accum_steps},
                {"learning_rate", learning_rate},
                {"max_steps", max_steps},
                {"weight_decay", weight_decay},
                {"seed", seed},
                {"trainable", trainable == Trainable::FullBackbone ? "full" : "adaptation"},
                {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},
                {"adam_eps", adam_eps},
                {"warmup_steps", warmup_steps},
                {"checkpoint_every", checkpoint_every},
                {"max_grad_norm", max_grad_norm},
                {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    std::string t = j.value("trainable", "full");
    if (t == "full") c.trainable = Trainable::FullBackbone;
    else if (t == "adaptation") c.trainable = Trainable::AdaptationOnly;
    else throw std::invalid_argument("trainable must be \"full\" or \"adaptation\"");
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.threads = j.value("threads", c.threads);
    if (c.batch_size == 0 || c.grad_accum_steps == 0)
        throw std::invalid_argument("batch_size and grad_accum_steps must be positive");
    return c;
}

void AdamW::step(ParamStore& store, const double* grads, const std::vector<size_t>& active,
                 double lr, const TrainConfig& cfg) {
    for (size_t spec_idx : active) {
        const TensorSpec& spec = store.spec(spec_idx);
        uint64_t t = ++steps_[spec_idx];
        double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(t));
        double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(t));
        double* theta = store.data() + spec.offset;
        for (size_t i = spec.offset; i < spec.offset + spec.numel(); ++i) {
            double g = grads[i];
            m_[i] = cfg.adam_beta1 * m_[i] + (1.0 - cfg.adam_beta1) * g;
            v_[i] = cfg.adam_beta2 * v_[i] + (1.0 - cfg.adam_beta2) * g * g;
            double mhat = m_[i] / bc1;
            double vhat = v_[i] / bc2;
            size_t j = i - spec.offset;
            theta[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                              cfg.weight_decay * theta[j]);
        }
    }
}

namespace {

double scheduled_lr(const TrainConfig& cfg, size_t step) {
    if (cfg.warmup_steps == 0) return cfg.learning_rate;
    double f = double(step + 1) / double(cfg.warmup_steps);
    return cfg.learning_rate * std::min(1.0, f);
}

void clip_gradients(double* grads, size_t n, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (size_t i = 0; i < n; ++i) sq += grads[i] * grads[i];
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double s = max_norm / norm;
        for (size_t i = 0; i < n; ++i) grads[i] *= s;
    }
}

// Draws indices in seeded-epoch-shuffle order, independent of batch size so
// that accumulation regroupings see identical sample sequences.
class Schedule {
public:
    Schedule(size_t n, uint64_t seed) : n_(n), rng_(seed) {}

    size_t next() {
        if (cursor_ == order_.size()) {
            order_.resize(n_);
            for (size_t i = 0; i < n_; ++i) order_[i] = i;
            rng_.shuffle(order_);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

private:
    size_t n_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
};

struct WorkItem {
    const std::vector<TokenId>* ids;
    const std::vector<TokenId>* targets;
    const std::vector<uint8_t>* mask;
    Task route = Task::AsmToSrc;
    uint64_t dropout_seed = 0;
};

// Runs forward/backward for a micro-batch, threads over contiguous sample
// ranges, and reduces per-thread buffers in thread order so the result is
// deterministic for a fixed thread count.
double run_microbatch(const BackboneParams& bb, const AdaptationState* adapt,
                      const std::vector<WorkItem>& items, size_t threads,
                      bool use_dropout, double* bgrads, double* agrads) {
    size_t n_threads = std::min(threads == 0 ? size_t(1) : threads, items.size());
    if (n_threads <= 1) {
        double loss_sum = 0.0;
        ForwardTrace trace;
        for (const auto& item : items) {
            Rng drop_rng(item.dropout_seed);
            forward(bb, adapt, *item.ids, trace, use_dropout ? &drop_rng : nullptr,
                    item.route);
            size_t L = item.targets->size();
            size_t V = bb.config.vocab_size;
            loss_sum += clm_loss(trace.logits.data(), L, V, *item.targets, *item.mask);
            std::vector<double> dlogits(L * V);
            clm_loss_backward(trace.logits.data(), L, V, *item.targets, *item.mask, 1.0,
                              dlogits.data());
            backward(bb, adapt, *item.ids, trace, dlogits, bgrads, agrads);
        }
        return loss_sum;
    }

    size_t bsize = bb.store.size();
    size_t asize = adapt ? adapt->store.size() : 0;
    std::vector<std::vector<double>> tb(n_threads), ta(n_threads);
    std::vector<double> tloss(n_threads, 0.0);
    std::vector<std::thread> pool;
    for (size_t t = 0; t < n_threads; ++t) {
        size_t begin = items.size() * t / n_threads;
        size_t end = items.size() * (t + 1) / n_threads;
        tb[t].assign(bgrads ? bsize : 0, 0.0);
        ta[t].assign(agrads ? asize : 0, 0.0);
        pool.emplace_back([&, t, begin, end] {
            ForwardTrace trace;
            for (size_t s = begin; s < end; ++s) {
                const auto& item = items[s];
                Rng drop_rng(item.dropout_seed);
                forward(bb, adapt, *item.ids, trace, use_dropout ? &drop_rng : nullptr,
                        item.route);
                size_t L = item.targets->size();
                size_t V = bb.config.vocab_size;
                tloss[t] += clm_loss(trace.logits.data(), L, V, *item.targets, *item.mask);
                std::vector<double> dlogits(L * V);
                clm_loss_backward(trace.logits.data(), L, V, *item.targets, *item.mask, 1.0,
                                  dlogits.data());
                backward(bb, adapt, *item.ids, trace, dlogits,
                         bgrads ? tb[t].data() : nullptr, agrads ? ta[t].data() : nullptr);
            }
        });
    }
    for (auto& th : pool) th.join();

    double loss_sum = 0.0;
    for (size_t t = 0; t < n_threads; ++t) {
        loss_sum += tloss[t];
        if (bgrads)
            for (size_t i = 0; i < bsize; ++i) bgrads[i] += tb[t][i];
        if (agrads)
            for (size_t i = 0; i < asize; ++i) agrads[i] += ta[t][i];
    }
    return loss_sum;
}

uint64_t sample_dropout_seed(uint64_t base, uint64_t counter) {
    return base + 0x9e3779b97f4a7c15ULL * (counter + 1);
}

} // namespace

TrainResult pretrain_clm(BackboneParams& bb, const std::vector<TokenStream>& corpus,
                         const TrainConfig& cfg, const CheckpointHook& on_checkpoint) {
    if (bb.frozen) throw std::invalid_argument("pretrain_clm: backbone is frozen");
    if (corpus.empty()) throw std::invalid_argument("pretrain_clm: empty corpus");
    for (const auto& s : corpus) {
        if (s.ids.size() > bb.config.max_context)
            throw std::invalid_argument("pretrain_clm: stream exceeds max_context");
        if (s.ids.size() < 2)
            throw std::invalid_argument("pretrain_clm: streams need at least two tokens");
    }

    // Pre-slice targets/masks once.
    struct Enc {
        std::vector<TokenId> ids, targets;
        std::vector<uint8_t> mask;
    };
    std::vector<Enc> encs(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        encs[i].ids = corpus[i].ids;
        // Targets/mask span the full length so they align with the logits
        // rows; the final position has no next token and stays masked.
        encs[i].targets.assign(corpus[i].ids.begin() + 1, corpus[i].ids.end());
        encs[i].targets.push_back(0);
        encs[i].mask.assign(encs[i].targets.size(), 1);
        encs[i].mask.back() = 0;
    }

    std::vector<size_t> active(bb.store.specs().size());
    for (size_t i = 0; i < active.size(); ++i) active[i] = i;

    AdamW opt(bb.store.size(), bb.store.specs().size());
    Schedule sched(corpus.size(), cfg.seed);
    std::vector<double> grads(bb.store.size());
    TrainResult result;
    bool use_dropout = bb.config.dropout > 0.0;
    uint64_t sample_counter = 0;

    for (size_t step = 0; step < cfg.max_steps; ++step) {
        std::fill(grads.begin(), grads.end(), 0.0);
        double loss_sum = 0.0;
        size_t n_samples = 0;
        for (size_t micro = 0; micro < cfg.grad_accum_steps; ++micro) {
            std::vector<WorkItem> items;
            items.reserve(cfg.batch_size);
            for (size_t b = 0; b < cfg.batch_size; ++b) {
                const Enc& e = encs[sched.next()];
                items.push_back({&e.ids, &e.targets, &e.mask, Task::AsmToSrc,
                                 sample_dropout_seed(cfg.seed, sample_counter++)});
            }
            loss_sum += run_microbatch(bb, nullptr, items, cfg.threads, use_dropout,
                                       grads.data(), nullptr);
            n_samples += items.size();
        }
        double inv = 1.0 / double(n_samples);
        for (double& g : grads) g *= inv;
        double loss = loss_sum * inv;
        if (std::isnan(loss) || std::isinf(loss))
            throw std::runtime_error("pretrain_clm: non-finite loss at step " +
                                     std::to_string(step));
        clip_gradients(grads.data(), grads.size(), cfg.max_grad_norm);
        opt.step(bb.store, grads.data(), active, scheduled_lr(cfg, step), cfg);
        result.loss_history.push_back(loss);
        if (on_checkpoint && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0)
            on_checkpoint(step + 1);
    }
    return result;
}

TrainResult finetune(const BackboneParams& bb, AdaptationState& state,
                     const std::vector<Sample>& data, const Vocab& vocab,
                     const TrainConfig& cfg, const CheckpointHook& on_checkpoint) {
    if (cfg.trainable != TrainConfig::Trainable::AdaptationOnly)
        throw std::invalid_argument("finetune requires trainable == AdaptationOnly");
    if (data.empty()) throw std::invalid_argument("finetune: empty data");
    if (vocab.size() != bb.config.vocab_size)
        throw std::invalid_argument("finetune: vocab does not match the backbone");

    std::vector<PairEncoding> encs;
    encs.reserve(data.size());
    std::set<Task> tasks_present;
    for (const auto& s : data) {
        if (!state.has_task(s.task))
            throw std::invalid_argument(std::string("finetune: sample task ") +
                                        task_name(s.task) + " has no adapter/prefix");
        if (pair_token_count(vocab, s, state.config.n_prefix) > bb.config.max_context)
            throw std::invalid_argument("finetune: sample \"" + s.id +
                                        "\" exceeds the length filter");
        encs.push_back(format_pair(vocab, s, state.config.strategy, state.config.n_prefix));
        tasks_present.insert(s.task);
    }

    AdamW opt(state.store.size(), state.store.specs().size());
    Schedule sched(data.size(), cfg.seed);
    std::vector<double> grads(state.store.size());
    TrainResult result;
    bool use_dropout = bb.config.dropout > 0.0;
    uint64_t sample_counter = 0;

    for (size_t step = 0; step < cfg.max_steps; ++step) {
        std::fill(grads.begin(), grads.end(), 0.0);
        double loss_sum = 0.0;
        size_t n_samples = 0;
        std::set<Task> step_tasks;
        for (size_t micro = 0; micro < cfg.grad_accum_steps; ++micro) {
            std::vector<WorkItem> items;
            items.reserve(cfg.batch_size);
            for (size_t b = 0; b < cfg.batch_size; ++b) {
                size_t idx = sched.next();
                const PairEncoding& e = encs[idx];
                step_tasks.insert(data[idx].task);
                items.push_back({&e.ids, &e.targets, &e.loss_mask, data[idx].task,
                                 sample_dropout_seed(cfg.seed, sample_counter++)});
            }
            loss_sum += run_microbatch(bb, &state, items, cfg.threads, use_dropout, nullptr,
                                       grads.data());
            n_samples += items.size();
        }
        double inv = 1.0 / double(n_samples);
        for (double& g : grads) g *= inv;
        double loss = loss_sum * inv;
        if (std::isnan(loss) || std::isinf(loss))
            throw std::runtime_error("finetune: non-finite loss at step " +
                                     std::to_string(step));
        clip_gradients(grads.data(), grads.size(), cfg.max_grad_norm);

        // Only parameters routed this step are updated; tensors belonging to
        // absent tasks stay bit-identical (including weight decay).
        std::vector<size_t> active = state.shared_specs();
        for (Task t : step_tasks) {
            auto ts = state.task_specs(t);
            active.insert(active.end(), ts.begin(), ts.end());
        }
        opt.step(state.store, grads.data(), active, scheduled_lr(cfg, step), cfg);
        result.loss_history.push_back(loss);
        if (on_checkpoint && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0)
            on_checkpoint(step + 1);
    }
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<double>& history,
                    const TrainConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write loss history: " + path);
    out << "step,loss,lr\n";
    out << std::setprecision(17);
    for (size_t i = 0; i < history.size(); ++i)
        out << i << "," << history[i] << "," << scheduled_lr(cfg, i) << "\n";
}

} // namespace retrans
