// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retrans/model.hpp"
#include "retrans/sandbox.hpp"

namespace retrans {

// Normalized Levenshtein similarity over characters:
// 1 - dist(a, b) / max(|a|, |b|); both-empty is defined as 1.
double edit_similarity(const std::string& a, const std::string& b);

// Same metric over token IDs (the --unit token alternative).
double edit_similarity_tokens(const Vocab& vocab, const std::string& a,
                              const std::string& b, Role role);

// A model usable for translation/scoring: backbone + optional adaptation +
// the tokenizer it was trained with.
struct Bundle {
    const BackboneParams* backbone = nullptr;
    const AdaptationState* adapt = nullptr;
    const Vocab* vocab = nullptr;

    Strategy strategy() const {
        return adapt ? adapt->config.strategy : Strategy::MultiAdapter;
    }
    size_t n_prefix() const { return adapt ? adapt->config.n_prefix : 1; }
};

// Greedy-matching contextual similarity over the bundle's own final-layer
// token representations: cosine scores rescaled to [0, 1], averaged in both
// match directions, combined as F1. Identical strings score exactly 1.
// Throws when either string tokenizes to nothing or exceeds max_context.
double semantic_similarity(const std::string& a, const std::string& b,
                           const Bundle& embedder, Role role);

struct MetricSelection {
    bool edit = false;
    bool sem = false;
    bool reexec = false;
    bool ppl = false;

    static MetricSelection parse(const std::string& csv); // "edit,sem,reexec,ppl"
};

// Raised when a selected metric needs a missing host facility (compiler).
class EnvUnavailableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvalOptions {
    enum class Unit { Char, Token } unit = Unit::Char;
    uint64_t seed = 0;
    size_t max_new = 0; // 0 = up to the context limit
    // Optional per-sample expected exit codes (by sample id) for reexec.
    std::map<std::string, int> expected_exit;
};

struct SampleResult {
    std::string id;
    Task task = Task::AsmToSrc;
    bool excluded = false;
    std::optional<double> edit_sim;
    std::optional<double> sem_sim;
    std::optional<int> reexec;
    std::string reexec_stage;
    std::string translation;
    std::string error;
};

struct Aggregates {
    size_t evaluated = 0;
    std::optional<double> mean_edit_sim;
    std::optional<double> mean_sem_sim;
    std::optional<double> reexec_rate;
    std::optional<double> perplexity;
};

struct EvalReport {
    int schema_version = 1;
    std::vector<SampleResult> samples;
    Aggregates overall;
    std::map<std::string, Aggregates> per_task; // keyed by task name
    // Environment block.
    std::string compiler_command;
    double time_limit_sec = 0.0;
    uint64_t memory_limit_bytes = 0;
    uint64_t seed = 0;

    std::string to_json() const;
    std::string to_csv() const;
};

// Recomputes aggregates from per-sample rows; excluded samples never count.
Aggregates aggregate(const std::vector<SampleResult>& rows,
                     std::optional<Task> task_filter);

// Translates every sample greedily, scores the selected metrics against the
// reference outputs, and aggregates per task and overall. Re-executability
// runs only for samples whose generated text is C source (Asm->Src). Over-
// length samples are reported as excluded. A per-sample failure is recorded
// on its row; the corpus run continues. Throws EnvUnavailableError up front
// when reexec is selected but no compiler resolves.
EvalReport evaluate_corpus(const Bundle& bundle, const std::vector<Sample>& samples,
                           const MetricSelection& metrics, const SandboxConfig& sandbox,
                           const EvalOptions& opts);

struct PplComparison {
    double ppl_base = 0.0;
    double ppl_adapted = 0.0;
    double delta = 0.0; // adapted - base
};

// Perplexity of both bundles over the same token streams, with optional
// per-stream task routing. Throws when the bundles use different tokenizers
// or the corpus is empty.
PplComparison compare_perplexity(const Bundle& base, const Bundle& adapted,
                                 const std::vector<TokenStream>& corpus,
                                 const std::vector<Task>* routes = nullptr);

} // namespace retrans
