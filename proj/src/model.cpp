// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "retrans/rng.hpp"
#include "retrans/tensor.hpp"

namespace retrans {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

// y = ln(x) row-wise; caches mean and reciprocal std per row.
void ln_forward(const double* x, const double* gamma, const double* beta,
                size_t L, size_t d, double* y, double* mean, double* rstd) {
    for (size_t i = 0; i < L; ++i) {
        const double* xi = x + i * d;
        double m = 0.0;
        for (size_t j = 0; j < d; ++j) m += xi[j];
        m /= double(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = xi[j] - m;
            var += c * c;
        }
        var /= double(d);
        double rs = 1.0 / std::sqrt(var + kLnEps);
        mean[i] = m;
        rstd[i] = rs;
        double* yi = y + i * d;
        for (size_t j = 0; j < d; ++j) yi[j] = (xi[j] - m) * rs * gamma[j] + beta[j];
    }
}

// Accumulates dx (+=) and parameter grads (optional).
void ln_backward(const double* dy, const double* x, const double* mean,
                 const double* rstd, const double* gamma, size_t L, size_t d,
                 double* dx, double* dgamma, double* dbeta) {
    for (size_t i = 0; i < L; ++i) {
        const double* dyi = dy + i * d;
        const double* xi = x + i * d;
        double m = mean[i], rs = rstd[i];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double xhat = (xi[j] - m) * rs;
            double dxhat = dyi[j] * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            if (dgamma) dgamma[j] += dyi[j] * xhat;
            if (dbeta) dbeta[j] += dyi[j];
        }
        double inv_d = 1.0 / double(d);
        double* dxi = dx + i * d;
        for (size_t j = 0; j < d; ++j) {
            double xhat = (xi[j] - m) * rs;
            double dxhat = dyi[j] * gamma[j];
            dxi[j] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
}

struct ProjGradCtx {
    const BackboneParams& bb;
    const AdaptationState* adapt;
    double* bgrads;
    double* agrads;

    const double* bt(size_t idx) const { return bb.store.tensor(idx); }
    double* bg(size_t idx) const {
        return bgrads ? bgrads + bb.store.spec(idx).offset : nullptr;
    }
    const double* at(size_t idx) const { return adapt->store.tensor(idx); }
    double* ag(size_t idx) const {
        return agrads ? agrads + adapt->store.spec(idx).offset : nullptr;
    }
};

// Forward helper: y[L x dout] = x[L x din] * W + b, plus the LoRA bypass when
// `pair` is non-null; caches the bottleneck activation in `mid`.
void project(const double* x, size_t L, size_t din, size_t dout, const double* W,
             const double* b, const AdaptationState* adapt, const LoraPair* pair,
             std::vector<double>& mid, double* y) {
    mm(y, x, W, L, din, dout, false);
    if (b) add_row_bias(y, b, L, dout);
    if (adapt && pair) {
        size_t r = adapt->config.r_lora;
        mid.assign(L * r, 0.0);
        mm(mid.data(), x, adapt->store.tensor(pair->down), L, din, r, false);
        double s = adapt->lora_scaling();
        if (s == 1.0) {
            mm(y, mid.data(), adapt->store.tensor(pair->up), L, r, dout, true);
        } else {
            std::vector<double> scaled(mid);
            for (double& v : scaled) v *= s;
            mm(y, scaled.data(), adapt->store.tensor(pair->up), L, r, dout, true);
        }
    }
}

// Backward through project(): accumulates dW/db (backbone sinks), LoRA factor
// grads (adaptation sinks) and dx (+=).
void project_backward(const ProjGradCtx& ctx, const double* x, const double* dy,
                      size_t L, size_t din, size_t dout, size_t w_idx, size_t b_idx,
                      bool has_bias, const LoraPair* pair, const std::vector<double>& mid,
                      double* dx) {
    if (ctx.bgrads) {
        mm_AtB(ctx.bg(w_idx), x, dy, L, din, dout, true);
        if (has_bias) bias_grad(ctx.bg(b_idx), dy, L, dout);
    }
    mm_ABt(dx, dy, ctx.bt(w_idx), L, dout, din, true);
    if (ctx.adapt && pair) {
        size_t r = ctx.adapt->config.r_lora;
        double s = ctx.adapt->lora_scaling();
        // dmid = s * dy * up^T
        std::vector<double> dmid(L * r, 0.0);
        mm_ABt(dmid.data(), dy, ctx.at(pair->up), L, dout, r, false);
        for (double& v : dmid) v *= s;
        if (ctx.agrads) {
            // d(up) += s * mid^T dy ; fold s into mid copy
            std::vector<double> mid_s(mid);
            for (double& v : mid_s) v *= s;
            mm_AtB(ctx.ag(pair->up), mid_s.data(), dy, L, r, dout, true);
            mm_AtB(ctx.ag(pair->down), x, dmid.data(), L, din, r, true);
        }
        mm_ABt(dx, dmid.data(), ctx.at(pair->down), L, r, din, true);
    }
}

void check_ids(const ModelConfig& cfg, std::span<const TokenId> ids) {
    if (ids.size() > cfg.max_context)
        throw std::invalid_argument("sequence of " + std::to_string(ids.size()) +
                                    " tokens exceeds max_context " +
                                    std::to_string(cfg.max_context));
    for (TokenId id : ids)
        if (id < 0 || size_t(id) >= cfg.vocab_size)
            throw std::out_of_range("token id " + std::to_string(id) +
                                    " out of range for vocab of size " +
                                    std::to_string(cfg.vocab_size));
}

} // namespace

BackboneParams BackboneParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    BackboneParams bb;
    bb.config = cfg;
    auto& st = bb.store;
    bb.tok_emb = st.add("tok_emb", cfg.vocab_size, cfg.d_model);
    bb.pos_emb = st.add("pos_emb", cfg.max_context, cfg.d_model);
    for (size_t l = 0; l < cfg.n_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        LayerParams lp;
        lp.ln1_g = st.add(p + "ln1.g", 1, cfg.d_model);
        lp.ln1_b = st.add(p + "ln1.b", 1, cfg.d_model);
        lp.wq = st.add(p + "attn.wq", cfg.d_model, cfg.d_model);
        lp.bq = st.add(p + "attn.bq", 1, cfg.d_model);
        lp.wk = st.add(p + "attn.wk", cfg.d_model, cfg.d_model);
        lp.bk = st.add(p + "attn.bk", 1, cfg.d_model);
        lp.wv = st.add(p + "attn.wv", cfg.d_model, cfg.d_model);
        lp.bv = st.add(p + "attn.bv", 1, cfg.d_model);
        lp.wo = st.add(p + "attn.wo", cfg.d_model, cfg.d_model);
        lp.bo = st.add(p + "attn.bo", 1, cfg.d_model);
        lp.ln2_g = st.add(p + "ln2.g", 1, cfg.d_model);
        lp.ln2_b = st.add(p + "ln2.b", 1, cfg.d_model);
        lp.w1 = st.add(p + "ffn.w1", cfg.d_model, cfg.d_ff);
        lp.b1 = st.add(p + "ffn.b1", 1, cfg.d_ff);
        lp.w2 = st.add(p + "ffn.w2", cfg.d_ff, cfg.d_model);
        lp.b2 = st.add(p + "ffn.b2", 1, cfg.d_model);
        bb.layers.push_back(lp);
    }
    bb.lnf_g = st.add("ln_f.g", 1, cfg.d_model);
    bb.lnf_b = st.add("ln_f.b", 1, cfg.d_model);
    if (!cfg.tie_embeddings) bb.head = st.add("head", cfg.d_model, cfg.vocab_size);

    Rng rng(seed);
    auto fill_normal = [&](size_t idx, double std_dev) {
        double* p = st.tensor(idx);
        size_t n = st.spec(idx).numel();
        for (size_t i = 0; i < n; ++i) p[i] = rng.next_gaussian() * std_dev;
    };
    auto fill_const = [&](size_t idx, double v) {
        double* p = st.tensor(idx);
        size_t n = st.spec(idx).numel();
        std::fill(p, p + n, v);
    };
    fill_normal(bb.tok_emb, 0.02);
    fill_normal(bb.pos_emb, 0.02);
    for (const auto& lp : bb.layers) {
        fill_const(lp.ln1_g, 1.0);
        fill_normal(lp.wq, 0.02);
        fill_normal(lp.wk, 0.02);
        fill_normal(lp.wv, 0.02);
        fill_normal(lp.wo, 0.02);
        fill_const(lp.ln2_g, 1.0);
        fill_normal(lp.w1, 0.02);
        fill_normal(lp.w2, 0.02);
    }
    fill_const(bb.lnf_g, 1.0);
    // Output head stays zero-initialized: a fresh model emits uniform logits.
    return bb;
}

void forward(const BackboneParams& bb, const AdaptationState* adapt,
             std::span<const TokenId> ids, ForwardTrace& trace, Rng* dropout_rng,
             std::optional<Task> route) {
    const ModelConfig& cfg = bb.config;
    check_ids(cfg, ids);
    if (adapt && adapt->model_config != cfg)
        throw std::invalid_argument("adaptation state was built for a different model shape");

    const size_t L = ids.size();
    const size_t d = cfg.d_model;
    const size_t H = cfg.n_heads;
    const size_t dh = d / H;
    const size_t V = cfg.vocab_size;

    const bool use_dropout = cfg.dropout > 0.0 && dropout_rng != nullptr;
    auto make_drop_mask = [&](std::vector<double>& mask, double* x, size_t n) {
        double keep = 1.0 - cfg.dropout;
        mask.resize(n);
        for (size_t i = 0; i < n; ++i) {
            bool kept = dropout_rng->next_double01() >= cfg.dropout;
            mask[i] = kept ? 1.0 / keep : 0.0;
            x[i] *= mask[i];
        }
    };

    trace.L = L;
    trace.layers.resize(cfg.n_layers);
    trace.prefix_positions.clear();
    trace.drop_x0.clear();
    trace.drop_attn.assign(use_dropout ? cfg.n_layers : 0, {});
    trace.drop_ff.assign(use_dropout ? cfg.n_layers : 0, {});
    trace.logits.assign(L * V, 0.0);
    if (L == 0) {
        trace.x0.clear();
        trace.lnf_out.clear();
        trace.final_hidden.clear();
        return;
    }

    const Task active = route ? *route : (adapt ? adapt->active_task : Task::AsmToSrc);
    trace.routed_task = active;
    const bool s2s = adapt && adapt->config.strategy == Strategy::Seq2SeqUnified &&
                     adapt->prefixes.count(active) > 0;
    const TokenId carrier = Vocab::prefix_id_for(active);
    const double* prefix_block =
        s2s ? adapt->store.tensor(adapt->prefixes.at(active)) : nullptr;
    const size_t n_prefix = adapt ? adapt->config.n_prefix : 0;

    trace.x0.assign(L * d, 0.0);
    const double* tok = bb.store.tensor(bb.tok_emb);
    const double* pos = bb.store.tensor(bb.pos_emb);
    size_t occ = 0;
    for (size_t p = 0; p < L; ++p) {
        const double* row;
        if (s2s && ids[p] == carrier) {
            size_t k = occ < n_prefix ? occ : n_prefix - 1;
            trace.prefix_positions.emplace_back(p, k);
            row = prefix_block + k * d;
            ++occ;
        } else {
            row = tok + size_t(ids[p]) * d;
        }
        double* x = trace.x0.data() + p * d;
        const double* pe = pos + p * d;
        for (size_t j = 0; j < d; ++j) x[j] = row[j] + pe[j];
    }
    if (use_dropout) make_drop_mask(trace.drop_x0, trace.x0.data(), L * d);

    const double att_scale = 1.0 / std::sqrt(double(dh));
    const double* x_in = trace.x0.data();

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        auto& t = trace.layers[l];
        const LayerParams& lp = bb.layers[l];
        const LoraLayerIdx* lora = (adapt && !adapt->lora.empty()) ? &adapt->lora[l] : nullptr;

        t.ln1_out.assign(L * d, 0.0);
        t.ln1_mean.assign(L, 0.0);
        t.ln1_rstd.assign(L, 0.0);
        ln_forward(x_in, bb.store.tensor(lp.ln1_g), bb.store.tensor(lp.ln1_b), L, d,
                   t.ln1_out.data(), t.ln1_mean.data(), t.ln1_rstd.data());

        t.q.assign(L * d, 0.0);
        t.k.assign(L * d, 0.0);
        t.v.assign(L * d, 0.0);
        project(t.ln1_out.data(), L, d, d, bb.store.tensor(lp.wq), bb.store.tensor(lp.bq),
                adapt, lora ? &lora->wq : nullptr, t.lq, t.q.data());
        project(t.ln1_out.data(), L, d, d, bb.store.tensor(lp.wk), bb.store.tensor(lp.bk),
                adapt, lora ? &lora->wk : nullptr, t.lk, t.k.data());
        project(t.ln1_out.data(), L, d, d, bb.store.tensor(lp.wv), bb.store.tensor(lp.bv),
                adapt, lora ? &lora->wv : nullptr, t.lv, t.v.data());

        // Causal multi-head attention; softmax runs over j <= i only, so the
        // mask is exact rather than additive.
        t.probs.assign(H * L * L, 0.0);
        t.ctx.assign(L * d, 0.0);
        std::vector<double> srow(L);
        for (size_t h = 0; h < H; ++h) {
            double* probs_h = t.probs.data() + h * L * L;
            size_t col = h * dh;
            for (size_t i = 0; i < L; ++i) {
                const double* qi = t.q.data() + i * d + col;
                double maxv = -1e300;
                for (size_t j = 0; j <= i; ++j) {
                    const double* kj = t.k.data() + j * d + col;
                    double s = 0.0;
                    for (size_t u = 0; u < dh; ++u) s += qi[u] * kj[u];
                    s *= att_scale;
                    srow[j] = s;
                    if (s > maxv) maxv = s;
                }
                double denom = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    srow[j] = std::exp(srow[j] - maxv);
                    denom += srow[j];
                }
                double* pr = probs_h + i * L;
                double* ci = t.ctx.data() + i * d + col;
                for (size_t j = 0; j <= i; ++j) {
                    double p = srow[j] / denom;
                    pr[j] = p;
                    const double* vj = t.v.data() + j * d + col;
                    for (size_t u = 0; u < dh; ++u) ci[u] += p * vj[u];
                }
            }
        }

        std::vector<double> attn_out(L * d, 0.0);
        project(t.ctx.data(), L, d, d, bb.store.tensor(lp.wo), bb.store.tensor(lp.bo),
                adapt, lora ? &lora->wo : nullptr, t.lo, attn_out.data());
        if (use_dropout) make_drop_mask(trace.drop_attn[l], attn_out.data(), L * d);

        t.x1.assign(L * d, 0.0);
        for (size_t i = 0; i < L * d; ++i) t.x1[i] = x_in[i] + attn_out[i];

        t.ln2_out.assign(L * d, 0.0);
        t.ln2_mean.assign(L, 0.0);
        t.ln2_rstd.assign(L, 0.0);
        ln_forward(t.x1.data(), bb.store.tensor(lp.ln2_g), bb.store.tensor(lp.ln2_b), L, d,
                   t.ln2_out.data(), t.ln2_mean.data(), t.ln2_rstd.data());

        t.ff_pre.assign(L * cfg.d_ff, 0.0);
        project(t.ln2_out.data(), L, d, cfg.d_ff, bb.store.tensor(lp.w1),
                bb.store.tensor(lp.b1), adapt, lora ? &lora->w1 : nullptr, t.l1,
                t.ff_pre.data());

        t.ff_act.assign(L * cfg.d_ff, 0.0);
        for (size_t i = 0; i < L * cfg.d_ff; ++i) t.ff_act[i] = gelu(t.ff_pre[i]);

        t.ff_out.assign(L * d, 0.0);
        project(t.ff_act.data(), L, cfg.d_ff, d, bb.store.tensor(lp.w2),
                bb.store.tensor(lp.b2), adapt, lora ? &lora->w2 : nullptr, t.l2,
                t.ff_out.data());

        // Task adapter: residual bottleneck applied to the feed-forward
        // output before the block residual.
        std::vector<double> ff_final;
        const double* ff_ptr = t.ff_out.data();
        if (adapt && adapt->config.strategy == Strategy::MultiAdapter &&
            !adapt->adapters.empty()) {
            size_t r = adapt->config.r_adapter;
            if (!adapt->mix_weights.empty()) {
                // Convex combination over task adapters (inference only).
                ff_final = t.ff_out;
                for (const auto& [task, w] : adapt->mix_weights) {
                    const auto& idx = adapt->adapters.at(task)[l];
                    std::vector<double> pre(L * r, 0.0);
                    mm(pre.data(), t.ff_out.data(), adapt->store.tensor(idx.down), L, d, r,
                       false);
                    for (double& v : pre) v = v > 0.0 ? v : 0.0;
                    std::vector<double> delta(L * d, 0.0);
                    mm(delta.data(), pre.data(), adapt->store.tensor(idx.up), L, r, d, false);
                    for (size_t i = 0; i < L * d; ++i) ff_final[i] += w * delta[i];
                }
                ff_ptr = ff_final.data();
            } else {
                const auto& idx = adapt->adapters.at(active)[l];
                t.adapter_pre.assign(L * r, 0.0);
                mm(t.adapter_pre.data(), t.ff_out.data(), adapt->store.tensor(idx.down), L,
                   d, r, false);
                std::vector<double> act(L * r);
                for (size_t i = 0; i < L * r; ++i)
                    act[i] = t.adapter_pre[i] > 0.0 ? t.adapter_pre[i] : 0.0;
                ff_final = t.ff_out;
                mm(ff_final.data(), act.data(), adapt->store.tensor(idx.up), L, r, d, true);
                ff_ptr = ff_final.data();
            }
        }

        t.x2.assign(L * d, 0.0);
        if (use_dropout) {
            auto& mask = trace.drop_ff[l];
            double keep = 1.0 - cfg.dropout;
            mask.resize(L * d);
            for (size_t i = 0; i < L * d; ++i) {
                bool kept = dropout_rng->next_double01() >= cfg.dropout;
                mask[i] = kept ? 1.0 / keep : 0.0;
                t.x2[i] = t.x1[i] + ff_ptr[i] * mask[i];
            }
        } else {
            for (size_t i = 0; i < L * d; ++i) t.x2[i] = t.x1[i] + ff_ptr[i];
        }
        x_in = t.x2.data();
    }

    trace.lnf_out.assign(L * d, 0.0);
    trace.lnf_mean.assign(L, 0.0);
    trace.lnf_rstd.assign(L, 0.0);
    ln_forward(x_in, bb.store.tensor(bb.lnf_g), bb.store.tensor(bb.lnf_b), L, d,
               trace.lnf_out.data(), trace.lnf_mean.data(), trace.lnf_rstd.data());
    trace.final_hidden = trace.lnf_out;

    if (cfg.tie_embeddings) {
        mm_ABt(trace.logits.data(), trace.lnf_out.data(), bb.store.tensor(bb.tok_emb), L, d,
               V, false);
    } else {
        mm(trace.logits.data(), trace.lnf_out.data(), bb.store.tensor(bb.head), L, d, V,
           false);
    }
}

double clm_loss(const double* logits, size_t L, size_t V,
                std::span<const TokenId> targets, std::span<const uint8_t> mask) {
    if (targets.size() != L || mask.size() != L)
        throw std::invalid_argument("clm_loss: targets/mask length must equal logits rows");
    double total = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < L; ++i) {
        if (!mask[i]) continue;
        TokenId t = targets[i];
        if (t < 0 || size_t(t) >= V) throw std::out_of_range("clm_loss: target id out of range");
        const double* row = logits + i * V;
        double maxv = row[0];
        for (size_t j = 1; j < V; ++j)
            if (row[j] > maxv) maxv = row[j];
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) denom += std::exp(row[j] - maxv);
        total += (maxv + std::log(denom)) - row[size_t(t)];
        ++n;
    }
    if (n == 0) throw std::invalid_argument("clm_loss: every position is masked");
    return total / double(n);
}

void clm_loss_backward(const double* logits, size_t L, size_t V,
                       std::span<const TokenId> targets, std::span<const uint8_t> mask,
                       double scale, double* dlogits) {
    size_t n = 0;
    for (size_t i = 0; i < L; ++i)
        if (mask[i]) ++n;
    if (n == 0) throw std::invalid_argument("clm_loss_backward: every position is masked");
    double w = scale / double(n);
    for (size_t i = 0; i < L; ++i) {
        double* drow = dlogits + i * V;
        if (!mask[i]) {
            std::fill(drow, drow + V, 0.0);
            continue;
        }
        const double* row = logits + i * V;
        double maxv = row[0];
        for (size_t j = 1; j < V; ++j)
            if (row[j] > maxv) maxv = row[j];
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) denom += std::exp(row[j] - maxv);
        for (size_t j = 0; j < V; ++j) drow[j] = w * (std::exp(row[j] - maxv) / denom);
        drow[size_t(targets[i])] -= w;
    }
}

void backward(const BackboneParams& bb, const AdaptationState* adapt,
              std::span<const TokenId> ids, const ForwardTrace& trace,
              std::span<const double> dlogits_span, double* bgrads, double* agrads) {
    const ModelConfig& cfg = bb.config;
    const size_t L = trace.L;
    if (L == 0) return;
    if (dlogits_span.size() != L * cfg.vocab_size)
        throw std::invalid_argument("backward: dlogits must be trace.L x vocab_size");
    const double* dlogits = dlogits_span.data();
    const size_t d = cfg.d_model;
    const size_t H = cfg.n_heads;
    const size_t dh = d / H;
    const size_t V = cfg.vocab_size;
    if (adapt && !adapt->mix_weights.empty())
        throw std::logic_error("backward through mixed adapters is not supported");

    ProjGradCtx ctx{bb, adapt, bgrads, agrads};
    const double att_scale = 1.0 / std::sqrt(double(dh));

    // Head and final layer norm.
    std::vector<double> dlnf(L * d, 0.0);
    if (cfg.tie_embeddings) {
        mm(dlnf.data(), dlogits, bb.store.tensor(bb.tok_emb), L, V, d, false);
        if (bgrads) mm_AtB(ctx.bg(bb.tok_emb), dlogits, trace.lnf_out.data(), L, V, d, true);
    } else {
        mm_ABt(dlnf.data(), dlogits, bb.store.tensor(bb.head), L, V, d, false);
        if (bgrads) mm_AtB(ctx.bg(bb.head), trace.lnf_out.data(), dlogits, L, d, V, true);
    }

    const double* x_last =
        cfg.n_layers == 0 ? trace.x0.data() : trace.layers.back().x2.data();
    std::vector<double> dx(L * d, 0.0);
    ln_backward(dlnf.data(), x_last, trace.lnf_mean.data(), trace.lnf_rstd.data(),
                bb.store.tensor(bb.lnf_g), L, d, dx.data(),
                bgrads ? ctx.bg(bb.lnf_g) : nullptr, bgrads ? ctx.bg(bb.lnf_b) : nullptr);

    for (size_t l = cfg.n_layers; l-- > 0;) {
        const auto& t = trace.layers[l];
        const LayerParams& lp = bb.layers[l];
        const LoraLayerIdx* lora = (adapt && !adapt->lora.empty()) ? &adapt->lora[l] : nullptr;
        const double* layer_in = l == 0 ? trace.x0.data() : trace.layers[l - 1].x2.data();

        // x2 = x1 + ff_adapted
        std::vector<double> dffa(dx); // gradient w.r.t. adapter output
        std::vector<double> dx1(dx);  // residual branch
        if (!trace.drop_ff.empty() && !trace.drop_ff[l].empty())
            for (size_t i = 0; i < L * d; ++i) dffa[i] *= trace.drop_ff[l][i];

        // Adapter backward (active task only).
        std::vector<double> dff_out;
        if (adapt && adapt->config.strategy == Strategy::MultiAdapter &&
            !adapt->adapters.empty()) {
            size_t r = adapt->config.r_adapter;
            const auto& idx = adapt->adapters.at(trace.routed_task)[l];
            std::vector<double> act(L * r);
            for (size_t i = 0; i < L * r; ++i)
                act[i] = t.adapter_pre[i] > 0.0 ? t.adapter_pre[i] : 0.0;
            std::vector<double> dact(L * r, 0.0);
            mm_ABt(dact.data(), dffa.data(), adapt->store.tensor(idx.up), L, d, r, false);
            std::vector<double> dpre(L * r);
            for (size_t i = 0; i < L * r; ++i)
                dpre[i] = t.adapter_pre[i] > 0.0 ? dact[i] : 0.0;
            if (agrads) {
                mm_AtB(ctx.ag(idx.up), act.data(), dffa.data(), L, r, d, true);
                mm_AtB(ctx.ag(idx.down), t.ff_out.data(), dpre.data(), L, d, r, true);
            }
            dff_out = dffa; // identity path of h + up(relu(down h))
            mm_ABt(dff_out.data(), dpre.data(), adapt->store.tensor(idx.down), L, r, d, true);
        } else {
            dff_out = std::move(dffa);
        }

        // ff_out = ff_act * W2 (+ LoRA)
        std::vector<double> dff_act(L * cfg.d_ff, 0.0);
        project_backward(ctx, t.ff_act.data(), dff_out.data(), L, cfg.d_ff, d, lp.w2, lp.b2,
                         true, lora ? &lora->w2 : nullptr, t.l2, dff_act.data());

        std::vector<double> dff_pre(L * cfg.d_ff);
        for (size_t i = 0; i < L * cfg.d_ff; ++i)
            dff_pre[i] = dff_act[i] * gelu_grad(t.ff_pre[i]);

        std::vector<double> dln2(L * d, 0.0);
        project_backward(ctx, t.ln2_out.data(), dff_pre.data(), L, d, cfg.d_ff, lp.w1, lp.b1,
                         true, lora ? &lora->w1 : nullptr, t.l1, dln2.data());

        ln_backward(dln2.data(), t.x1.data(), t.ln2_mean.data(), t.ln2_rstd.data(),
                    bb.store.tensor(lp.ln2_g), L, d, dx1.data(),
                    bgrads ? ctx.bg(lp.ln2_g) : nullptr, bgrads ? ctx.bg(lp.ln2_b) : nullptr);

        // x1 = layer_in + attn_out
        std::vector<double> dattn(dx1);
        std::vector<double> dxin(dx1);
        if (!trace.drop_attn.empty() && !trace.drop_attn[l].empty())
            for (size_t i = 0; i < L * d; ++i) dattn[i] *= trace.drop_attn[l][i];

        std::vector<double> dctx(L * d, 0.0);
        project_backward(ctx, t.ctx.data(), dattn.data(), L, d, d, lp.wo, lp.bo, true,
                         lora ? &lora->wo : nullptr, t.lo, dctx.data());

        std::vector<double> dq(L * d, 0.0), dk(L * d, 0.0), dv(L * d, 0.0);
        std::vector<double> dprow(L);
        for (size_t h = 0; h < H; ++h) {
            const double* probs_h = t.probs.data() + h * L * L;
            size_t col = h * dh;
            for (size_t i = 0; i < L; ++i) {
                const double* pr = probs_h + i * L;
                const double* dci = dctx.data() + i * d + col;
                double dot_sum = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    const double* vj = t.v.data() + j * d + col;
                    double dp = 0.0;
                    for (size_t u = 0; u < dh; ++u) dp += dci[u] * vj[u];
                    dprow[j] = dp;
                    dot_sum += dp * pr[j];
                    double* dvj = dv.data() + j * d + col;
                    for (size_t u = 0; u < dh; ++u) dvj[u] += pr[j] * dci[u];
                }
                const double* qi = t.q.data() + i * d + col;
                double* dqi = dq.data() + i * d + col;
                for (size_t j = 0; j <= i; ++j) {
                    double ds = pr[j] * (dprow[j] - dot_sum) * att_scale;
                    const double* kj = t.k.data() + j * d + col;
                    double* dkj = dk.data() + j * d + col;
                    for (size_t u = 0; u < dh; ++u) {
                        dqi[u] += ds * kj[u];
                        dkj[u] += ds * qi[u];
                    }
                }
            }
        }

        std::vector<double> dln1(L * d, 0.0);
        project_backward(ctx, t.ln1_out.data(), dq.data(), L, d, d, lp.wq, lp.bq, true,
                         lora ? &lora->wq : nullptr, t.lq, dln1.data());
        project_backward(ctx, t.ln1_out.data(), dk.data(), L, d, d, lp.wk, lp.bk, true,
                         lora ? &lora->wk : nullptr, t.lk, dln1.data());
        project_backward(ctx, t.ln1_out.data(), dv.data(), L, d, d, lp.wv, lp.bv, true,
                         lora ? &lora->wv : nullptr, t.lv, dln1.data());

        ln_backward(dln1.data(), layer_in, t.ln1_mean.data(), t.ln1_rstd.data(),
                    bb.store.tensor(lp.ln1_g), L, d, dxin.data(),
                    bgrads ? ctx.bg(lp.ln1_g) : nullptr, bgrads ? ctx.bg(lp.ln1_b) : nullptr);

        dx = std::move(dxin);
    }

    // Embedding gradients; prefix-substituted positions route to the prefix
    // block instead of the token table.
    if (!trace.drop_x0.empty())
        for (size_t i = 0; i < L * d; ++i) dx[i] *= trace.drop_x0[i];
    size_t prefix_cursor = 0;
    for (size_t p = 0; p < L; ++p) {
        const double* dxp = dx.data() + p * d;
        bool is_prefix = prefix_cursor < trace.prefix_positions.size() &&
                         trace.prefix_positions[prefix_cursor].first == p;
        if (is_prefix) {
            size_t k = trace.prefix_positions[prefix_cursor].second;
            ++prefix_cursor;
            if (agrads && adapt) {
                double* dpref = ctx.ag(adapt->prefixes.at(trace.routed_task));
                for (size_t j = 0; j < d; ++j) dpref[k * d + j] += dxp[j];
            }
        } else if (bgrads) {
            double* drow = ctx.bg(bb.tok_emb) + size_t(ids[p]) * d;
            for (size_t j = 0; j < d; ++j) drow[j] += dxp[j];
        }
        if (bgrads) {
            double* dposr = ctx.bg(bb.pos_emb) + p * d;
            for (size_t j = 0; j < d; ++j) dposr[j] += dxp[j];
        }
    }
}

GenResult generate(const BackboneParams& bb, const AdaptationState* adapt,
                   std::span<const TokenId> prompt, const GenOptions& opts) {
    if (prompt.size() + opts.max_new > bb.config.max_context)
        throw std::invalid_argument(
            "generation would exceed max_context: prompt " + std::to_string(prompt.size()) +
            " + max_new " + std::to_string(opts.max_new) + " > " +
            std::to_string(bb.config.max_context));

    GenResult res;
    res.ids.assign(prompt.begin(), prompt.end());
    res.prompt_len = prompt.size();
    if (opts.max_new == 0) return res;
    if (prompt.empty())
        throw std::invalid_argument("generate requires a non-empty prompt");

    Rng rng(opts.seed);
    ForwardTrace trace;
    const size_t V = bb.config.vocab_size;
    std::vector<double> logp(V);

    for (size_t step = 0; step < opts.max_new; ++step) {
        forward(bb, adapt, res.ids, trace, nullptr, opts.route);
        const double* row = trace.logits.data() + (res.ids.size() - 1) * V;

        double maxv = row[0];
        for (size_t j = 1; j < V; ++j)
            if (row[j] > maxv) maxv = row[j];
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) denom += std::exp(row[j] - maxv);
        double lse = maxv + std::log(denom);

        TokenId next = 0;
        if (opts.mode == DecodeMode::Greedy) {
            for (size_t j = 1; j < V; ++j)
                if (row[j] > row[size_t(next)]) next = TokenId(j);
        } else {
            double temp = opts.temperature > 0.0 ? opts.temperature : 1.0;
            double tmax = row[0] / temp;
            for (size_t j = 1; j < V; ++j) tmax = std::max(tmax, row[j] / temp);
            double tsum = 0.0;
            for (size_t j = 0; j < V; ++j) {
                logp[j] = std::exp(row[j] / temp - tmax);
                tsum += logp[j];
            }
            double u = rng.next_double01() * tsum;
            double acc = 0.0;
            next = TokenId(V - 1);
            for (size_t j = 0; j < V; ++j) {
                acc += logp[j];
                if (u < acc) {
                    next = TokenId(j);
                    break;
                }
            }
        }

        res.logprobs.push_back(row[size_t(next)] - lse);
        res.ids.push_back(next);
        if (next == Vocab::EOS) break;
    }
    return res;
}

double sequence_logprob(const BackboneParams& bb, const AdaptationState* adapt,
                        std::span<const TokenId> ids, size_t from,
                        std::optional<Task> route) {
    if (from == 0 || from > ids.size())
        throw std::invalid_argument("sequence_logprob: `from` must be in [1, len]");
    ForwardTrace trace;
    forward(bb, adapt, ids, trace, nullptr, route);
    const size_t V = bb.config.vocab_size;
    double total = 0.0;
    for (size_t p = from; p < ids.size(); ++p) {
        const double* row = trace.logits.data() + (p - 1) * V;
        double maxv = row[0];
        for (size_t j = 1; j < V; ++j)
            if (row[j] > maxv) maxv = row[j];
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) denom += std::exp(row[j] - maxv);
        total += row[size_t(ids[p])] - (maxv + std::log(denom));
    }
    return total;
}

double perplexity(const BackboneParams& bb, const AdaptationState* adapt,
                  const std::vector<TokenStream>& corpus,
                  const std::vector<Task>* routes) {
    if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
    if (routes && routes->size() != corpus.size())
        throw std::invalid_argument("perplexity: routes must match corpus length");
    double total_nll = 0.0;
    size_t total_tokens = 0;
    ForwardTrace trace;
    const size_t V = bb.config.vocab_size;
    for (size_t si = 0; si < corpus.size(); ++si) {
        const auto& stream = corpus[si];
        if (stream.ids.size() < 2) continue;
        forward(bb, adapt, stream.ids, trace, nullptr,
                routes ? std::optional<Task>((*routes)[si]) : std::nullopt);
        for (size_t p = 1; p < stream.ids.size(); ++p) {
            const double* row = trace.logits.data() + (p - 1) * V;
            double maxv = row[0];
            for (size_t j = 1; j < V; ++j)
                if (row[j] > maxv) maxv = row[j];
            double denom = 0.0;
            for (size_t j = 0; j < V; ++j) denom += std::exp(row[j] - maxv);
            total_nll += (maxv + std::log(denom)) - row[size_t(stream.ids[p])];
        }
        total_tokens += stream.ids.size() - 1;
    }
    if (total_tokens == 0)
        throw std::invalid_argument("perplexity: no stream has two or more tokens");
    return std::exp(total_nll / double(total_tokens));
}

void save_backbone(const std::string& path, const BackboneParams& bb, const Vocab& vocab) {
    if (vocab.size() != bb.config.vocab_size)
        throw std::invalid_argument("save_backbone: vocab size " +
                                    std::to_string(vocab.size()) +
                                    " disagrees with model config " +
                                    std::to_string(bb.config.vocab_size));
    nlohmann::json header;
    header["kind"] = "backbone";
    header["model_config"] = bb.config.to_json();
    header["vocab"] = nlohmann::json::parse(vocab.to_json());
    save_container(path, header, bb.store);
}

LoadedBackbone load_backbone(const std::string& path) {
    auto loaded = load_container(path);
    if (loaded.header.value("kind", "") != "backbone")
        throw std::runtime_error(path + ": not a backbone checkpoint");
    ModelConfig cfg = ModelConfig::from_json(loaded.header.at("model_config"));
    BackboneParams bb = BackboneParams::init(cfg, 0);
    restore_store(bb.store, loaded.header, loaded.data);
    Vocab vocab = Vocab::from_json(loaded.header.at("vocab").dump());
    if (vocab.size() != cfg.vocab_size)
        throw std::runtime_error(path + ": vocab size disagrees with model config");
    return {std::move(bb), std::move(vocab)};
}

} // namespace retrans
