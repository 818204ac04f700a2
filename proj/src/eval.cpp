// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "retrans/format.hpp"

namespace retrans {

using nlohmann::json;

namespace {

size_t levenshtein(const auto& a, const auto& b) {
    size_t m = a.size(), n = b.size();
    if (m == 0) return n;
    if (n == 0) return m;
    std::vector<size_t> prev(n + 1), cur(n + 1);
    for (size_t j = 0; j <= n; ++j) prev[j] = j;
    for (size_t i = 1; i <= m; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= n; ++j) {
            size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double normalized_similarity(size_t dist, size_t la, size_t lb) {
    size_t mx = std::max(la, lb);
    if (mx == 0) return 1.0;
    return 1.0 - double(dist) / double(mx);
}

} // namespace

double edit_similarity(const std::string& a, const std::string& b) {
    return normalized_similarity(levenshtein(a, b), a.size(), b.size());
}

double edit_similarity_tokens(const Vocab& vocab, const std::string& a,
                              const std::string& b, Role role) {
    auto ta = encode(vocab, a, role).ids;
    auto tb = encode(vocab, b, role).ids;
    return normalized_similarity(levenshtein(ta, tb), ta.size(), tb.size());
}

double semantic_similarity(const std::string& a, const std::string& b,
                           const Bundle& embedder, Role role) {
    if (a == b) return 1.0; // self-match is exact by definition

    const Vocab& vocab = *embedder.vocab;
    auto ta = encode(vocab, a, role);
    auto tb = encode(vocab, b, role);
    if (ta.ids.empty() || tb.ids.empty())
        throw std::invalid_argument("semantic_similarity: empty string after tokenization");

    auto embed = [&](const TokenStream& s) {
        ForwardTrace trace;
        forward(*embedder.backbone, embedder.adapt, s.ids, trace);
        size_t L = s.ids.size(), d = embedder.backbone->config.d_model;
        std::vector<double> h = std::move(trace.final_hidden);
        for (size_t i = 0; i < L; ++i) {
            double sq = 0.0;
            for (size_t j = 0; j < d; ++j) sq += h[i * d + j] * h[i * d + j];
            double norm = std::sqrt(sq);
            if (norm > 0.0)
                for (size_t j = 0; j < d; ++j) h[i * d + j] /= norm;
        }
        return h;
    };
    std::vector<double> ha = embed(ta), hb = embed(tb);
    size_t la = ta.ids.size(), lb = tb.ids.size();
    size_t d = embedder.backbone->config.d_model;

    auto direction = [&](const std::vector<double>& from, size_t lf,
                         const std::vector<double>& to, size_t lt) {
        double total = 0.0;
        for (size_t i = 0; i < lf; ++i) {
            double best = -1.0;
            for (size_t j = 0; j < lt; ++j) {
                double dot = 0.0;
                for (size_t u = 0; u < d; ++u) dot += from[i * d + u] * to[j * d + u];
                best = std::max(best, dot);
            }
            total += std::clamp(best, -1.0, 1.0);
        }
        return total / double(lf);
    };

    // Cosines sit in [-1, 1]; rescale before the harmonic mean so F1 stays
    // in [0, 1].
    double precision = (direction(ha, la, hb, lb) + 1.0) / 2.0;
    double recall = (direction(hb, lb, ha, la) + 1.0) / 2.0;
    if (precision + recall <= 0.0) return 0.0;
    double f1 = 2.0 * precision * recall / (precision + recall);
    return std::clamp(f1, 0.0, 1.0);
}

MetricSelection MetricSelection::parse(const std::string& csv) {
    MetricSelection sel;
    std::istringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        if (tok == "edit") sel.edit = true;
        else if (tok == "sem") sel.sem = true;
        else if (tok == "reexec") sel.reexec = true;
        else if (tok == "ppl") sel.ppl = true;
        else throw std::invalid_argument("unknown metric \"" + tok + "\"");
    }
    return sel;
}

Aggregates aggregate(const std::vector<SampleResult>& rows, std::optional<Task> task_filter) {
    Aggregates agg;
    double edit_sum = 0.0, sem_sum = 0.0;
    size_t edit_n = 0, sem_n = 0, reexec_n = 0, reexec_ok = 0;
    for (const auto& r : rows) {
        if (task_filter && r.task != *task_filter) continue;
        if (r.excluded) continue;
        ++agg.evaluated;
        if (r.edit_sim) { edit_sum += *r.edit_sim; ++edit_n; }
        if (r.sem_sim) { sem_sum += *r.sem_sim; ++sem_n; }
        if (r.reexec) {
            ++reexec_n;
            reexec_ok += size_t(*r.reexec == 1);
        }
    }
    if (edit_n) agg.mean_edit_sim = edit_sum / double(edit_n);
    if (sem_n) agg.mean_sem_sim = sem_sum / double(sem_n);
    if (reexec_n) agg.reexec_rate = double(reexec_ok) / double(reexec_n);
    return agg;
}

namespace {

void eval_one(const Bundle& bundle, const Sample& s, const MetricSelection& metrics,
              const SandboxConfig& sandbox, const EvalOptions& opts, SampleResult& row) {
    const Vocab& vocab = *bundle.vocab;
    const ModelConfig& mc = bundle.backbone->config;
    row.id = s.id;
    row.task = s.task;

    if (pair_token_count(vocab, s, bundle.n_prefix()) > mc.max_context) {
        row.excluded = true;
        return;
    }

    try {
        auto prompt = format_prompt(vocab, s.input_text, s.task, bundle.strategy(),
                                    bundle.n_prefix());
        size_t room = mc.max_context - prompt.size();
        GenOptions gen_opts;
        gen_opts.max_new = opts.max_new == 0 ? room : std::min(opts.max_new, room);
        gen_opts.route = s.task;
        GenResult gen = generate(*bundle.backbone, bundle.adapt, prompt, gen_opts);

        TokenStream out_stream;
        out_stream.source_role = output_role(s.task);
        for (size_t i = gen.prompt_len; i < gen.ids.size(); ++i)
            if (gen.ids[i] != Vocab::EOS) out_stream.ids.push_back(gen.ids[i]);
        row.translation = decode(vocab, out_stream);

        if (metrics.edit) {
            row.edit_sim = opts.unit == EvalOptions::Unit::Char
                               ? edit_similarity(row.translation, s.output_text)
                               : edit_similarity_tokens(vocab, row.translation,
                                                        s.output_text, output_role(s.task));
        }
        if (metrics.sem) {
            try {
                row.sem_sim = semantic_similarity(row.translation, s.output_text, bundle,
                                                  output_role(s.task));
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        }
        if (metrics.reexec && s.task == Task::AsmToSrc) {
            std::optional<int> expected;
            if (auto it = opts.expected_exit.find(s.id); it != opts.expected_exit.end())
                expected = it->second;
            ReexecResult r = reexecutability(row.translation, sandbox, expected);
            if (r.env_unavailable) {
                row.error = r.detail;
            } else {
                row.reexec = r.score;
                row.reexec_stage = stage_name(r.stage);
            }
        }
    } catch (const std::exception& e) {
        row.error = e.what();
    }
}

} // namespace

EvalReport evaluate_corpus(const Bundle& bundle, const std::vector<Sample>& samples,
                           const MetricSelection& metrics, const SandboxConfig& sandbox,
                           const EvalOptions& opts) {
    if (!bundle.backbone || !bundle.vocab)
        throw std::invalid_argument("evaluate_corpus: incomplete model bundle");
    if (metrics.reexec && !compiler_available(sandbox))
        throw EnvUnavailableError("re-executability selected but compiler is unavailable: " +
                                  sandbox.compile_command);

    EvalReport report;
    report.compiler_command = sandbox.compile_command;
    report.time_limit_sec = sandbox.time_limit_sec;
    report.memory_limit_bytes = sandbox.memory_limit_bytes;
    report.seed = opts.seed;
    report.samples.resize(samples.size());

    size_t jobs = std::max<size_t>(1, sandbox.jobs);
    jobs = std::min(jobs, samples.size() == 0 ? size_t(1) : samples.size());
    if (jobs <= 1) {
        for (size_t i = 0; i < samples.size(); ++i)
            eval_one(bundle, samples[i], metrics, sandbox, opts, report.samples[i]);
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < jobs; ++t) {
            size_t begin = samples.size() * t / jobs;
            size_t end = samples.size() * (t + 1) / jobs;
            pool.emplace_back([&, begin, end] {
                for (size_t i = begin; i < end; ++i)
                    eval_one(bundle, samples[i], metrics, sandbox, opts, report.samples[i]);
            });
        }
        for (auto& th : pool) th.join();
    }

    report.overall = aggregate(report.samples, std::nullopt);
    report.per_task[task_name(Task::AsmToSrc)] = aggregate(report.samples, Task::AsmToSrc);
    report.per_task[task_name(Task::SrcToAsm)] = aggregate(report.samples, Task::SrcToAsm);

    if (metrics.ppl) {
        // Pooled token NLL over included pairs, routed per sample task.
        double total_nll = 0.0;
        size_t total_tokens = 0;
        for (size_t i = 0; i < samples.size(); ++i) {
            if (report.samples[i].excluded) continue;
            PairEncoding enc = format_pair(*bundle.vocab, samples[i], bundle.strategy(),
                                           bundle.n_prefix());
            total_nll -= sequence_logprob(*bundle.backbone, bundle.adapt, enc.ids, 1,
                                          samples[i].task);
            total_tokens += enc.ids.size() - 1;
        }
        if (total_tokens > 0)
            report.overall.perplexity = std::exp(total_nll / double(total_tokens));
    }
    return report;
}

PplComparison compare_perplexity(const Bundle& base, const Bundle& adapted,
                                 const std::vector<TokenStream>& corpus,
                                 const std::vector<Task>* routes) {
    if (!base.vocab || !adapted.vocab || !(*base.vocab == *adapted.vocab))
        throw std::invalid_argument("compare_perplexity: tokenizer mismatch between bundles");
    PplComparison out;
    out.ppl_base = perplexity(*base.backbone, base.adapt, corpus, routes);
    out.ppl_adapted = perplexity(*adapted.backbone, adapted.adapt, corpus, routes);
    out.delta = out.ppl_adapted - out.ppl_base;
    return out;
}

namespace {

json agg_to_json(const Aggregates& a) {
    json j;
    j["evaluated"] = a.evaluated;
    j["mean_edit_sim"] = a.mean_edit_sim ? json(*a.mean_edit_sim) : json(nullptr);
    j["mean_sem_sim"] = a.mean_sem_sim ? json(*a.mean_sem_sim) : json(nullptr);
    j["reexec_rate"] = a.reexec_rate ? json(*a.reexec_rate) : json(nullptr);
    j["perplexity"] = a.perplexity ? json(*a.perplexity) : json(nullptr);
    return j;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace

std::string EvalReport::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["environment"] = {{"compiler_command", compiler_command},
                        {"time_limit_sec", time_limit_sec},
                        {"memory_limit_bytes", memory_limit_bytes},
                        {"seed", seed}};
    j["aggregates"] = {{"overall", agg_to_json(overall)}};
    for (const auto& [name, agg] : per_task) j["aggregates"][name] = agg_to_json(agg);
    json rows = json::array();
    for (const auto& r : samples) {
        json row;
        row["id"] = r.id;
        row["task"] = task_name(r.task);
        row["excluded"] = r.excluded;
        row["edit_sim"] = r.edit_sim ? json(*r.edit_sim) : json(nullptr);
        row["sem_sim"] = r.sem_sim ? json(*r.sem_sim) : json(nullptr);
        row["reexec"] = r.reexec ? json(*r.reexec) : json(nullptr);
        row["reexec_stage"] = r.reexec_stage;
        row["translation"] = r.translation;
        row["error"] = r.error;
        rows.push_back(row);
    }
    j["samples"] = rows;
    return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "id,task,excluded,edit_sim,sem_sim,reexec,reexec_stage,error\n";
    out.precision(17);
    for (const auto& r : samples) {
        out << csv_escape(r.id) << "," << task_name(r.task) << ","
            << (r.excluded ? "1" : "0") << ",";
        if (r.edit_sim) out << *r.edit_sim;
        out << ",";
        if (r.sem_sim) out << *r.sem_sim;
        out << ",";
        if (r.reexec) out << *r.reexec;
        out << "," << r.reexec_stage << "," << csv_escape(r.error) << "\n";
    }
    return out.str();
}

} // namespace retrans
