// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0
//
// retrans: bidirectional assembly<->source translation pipeline.
// Subcommands: gen | ingest | normalize | tokenize | pretrain | finetune |
//              translate | eval | compare-ppl
// Exit codes: 0 success, 1 usage, 2 data error, 3 environment unavailable.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "retrans/corpus.hpp"
#include "retrans/eval.hpp"
#include "retrans/format.hpp"
#include "retrans/manifest.hpp"
#include "retrans/minilang.hpp"
#include "retrans/model.hpp"
#include "retrans/toyvm.hpp"
#include "retrans/train.hpp"

namespace {

using namespace retrans;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitEnv = 3;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_text_input(const std::string& path) {
    if (path == "-") {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        return ss.str();
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open input file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << text;
}

// Flags > config file > defaults. The config JSON mirrors TrainConfig.
TrainConfig resolve_train_config(CLI::App* cmd, const std::string& config_path,
                                 const TrainConfig& flag_values, bool adaptation_only) {
    TrainConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config file: " + config_path);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw std::runtime_error("malformed config JSON: " + config_path);
        cfg = TrainConfig::from_json(j);
    }
    auto take = [&](const char* flag, auto member) {
        if (cmd->count(flag) > 0) cfg.*member = flag_values.*member;
    };
    take("--batch-size", &TrainConfig::batch_size);
    take("--accum", &TrainConfig::grad_accum_steps);
    take("--lr", &TrainConfig::learning_rate);
    take("--steps", &TrainConfig::max_steps);
    take("--weight-decay", &TrainConfig::weight_decay);
    take("--seed", &TrainConfig::seed);
    take("--warmup", &TrainConfig::warmup_steps);
    take("--save-every", &TrainConfig::checkpoint_every);
    take("--max-grad-norm", &TrainConfig::max_grad_norm);
    take("--threads", &TrainConfig::threads);
    cfg.trainable = adaptation_only ? TrainConfig::Trainable::AdaptationOnly
                                    : TrainConfig::Trainable::FullBackbone;
    return cfg;
}

std::vector<nlohmann::json> read_jsonl_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open corpus file: " + path);
    std::vector<json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj = json::parse(line, nullptr, false);
        if (!obj.is_discarded()) records.push_back(std::move(obj));
    }
    return records;
}

struct LoadedBundle {
    LoadedBackbone backbone;
    std::optional<AdaptationState> adapt;

    Bundle view() {
        return Bundle{&backbone.backbone, adapt ? &*adapt : nullptr, &backbone.vocab};
    }
};

LoadedBundle load_bundle(const std::string& backbone_path, const std::string& adapt_path) {
    LoadedBundle b{load_backbone(backbone_path), std::nullopt};
    if (!adapt_path.empty()) {
        b.adapt = load_adaptation(adapt_path);
        if (b.adapt->model_config != b.backbone.backbone.config)
            throw std::runtime_error("adaptation checkpoint " + adapt_path +
                                     " does not match the backbone shape (d_model " +
                                     std::to_string(b.adapt->model_config.d_model) + " vs " +
                                     std::to_string(b.backbone.backbone.config.d_model) + ")");
    }
    return b;
}

// Length-gates a prompt the way the filter gates pairs: no truncation.
void check_prompt_length(size_t prompt_tokens, size_t max_context) {
    if (prompt_tokens > max_context)
        throw std::runtime_error(
            "input of " + std::to_string(prompt_tokens) + " tokens exceeds the " +
            std::to_string(max_context) +
            "-token context limit; over-length samples are excluded, never truncated");
}

int run_gen(size_t n, uint64_t seed, const std::string& out_path,
            const std::vector<std::string>& argv) {
    if (n == 0) throw UsageError("--n must be at least 1");
    auto programs = gen_mini_corpus(n, seed);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + out_path);
    for (size_t i = 0; i < programs.size(); ++i) {
        const auto& p = programs[i];
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "p%04zu", i);
        for (Task task : {Task::AsmToSrc, Task::SrcToAsm}) {
            json obj;
            obj["src"] = p.source;
            obj["asm"] = p.asm_text;
            obj["task"] = task_name(task);
            obj["id"] = std::string(idbuf) + "-" + task_name(task);
            obj["expected_exit"] = p.expected_exit_code;
            out << obj.dump() << "\n";
        }
    }
    out.close();

    RunManifest manifest;
    manifest.command = "gen";
    manifest.argv = argv;
    manifest.resolved_config = {{"n", n}, {"seed", seed}, {"out", out_path}};
    manifest.seed = seed;
    manifest.write(out_path);
    std::cout << "wrote " << programs.size() * 2 << " samples to " << out_path << "\n";
    return kExitOk;
}

int run_ingest(const std::string& in_path) {
    auto samples = ingest_jsonl(in_path);
    size_t a2s = 0, s2a = 0;
    for (const auto& s : samples) (s.task == Task::AsmToSrc ? a2s : s2a)++;
    std::cout << "samples: " << samples.size() << "\nasm2src: " << a2s
              << "\nsrc2asm: " << s2a << "\n";
    return kExitOk;
}

int run_normalize(const std::string& in_path, const std::string& out_path,
                  const NormalizationConfig& cfg, const std::vector<std::string>& argv) {
    std::string text = read_text_input(in_path);
    std::string result = normalize_asm(text, cfg);
    write_text_output(out_path, result);
    if (!out_path.empty() && out_path != "-") {
        RunManifest manifest;
        manifest.command = "normalize";
        manifest.argv = argv;
        manifest.resolved_config = {{"canonicalize", cfg.canonicalize},
                                    {"rename_registers", cfg.rename_registers},
                                    {"randomize_addresses", cfg.randomize_addresses},
                                    {"rng_seed", cfg.rng_seed}};
        manifest.seed = cfg.rng_seed;
        if (in_path != "-") manifest.add_input(in_path);
        manifest.write(out_path);
    }
    return kExitOk;
}

int run_tokenize(const std::string& vocab_out, const std::string& in_path,
                 const std::string& role_str, const std::string& corpus_path,
                 size_t max_context, const std::vector<std::string>& argv) {
    Vocab vocab = Vocab::build_default(max_context);
    if (!vocab_out.empty()) {
        vocab.save(vocab_out);
        RunManifest manifest;
        manifest.command = "tokenize";
        manifest.argv = argv;
        manifest.resolved_config = {{"max_context", max_context}};
        manifest.write(vocab_out);
        std::cout << "vocab size " << vocab.size() << " written to " << vocab_out << "\n";
    }
    if (!in_path.empty()) {
        Role role = role_str == "asm" ? Role::Assembly : Role::Source;
        std::string text = read_text_input(in_path);
        TokenStream ts = encode(vocab, text, role);
        std::cout << "tokens: " << ts.size() << " (bytes: " << text.size() << ")\n";
    }
    if (!corpus_path.empty()) {
        auto samples = ingest_jsonl(corpus_path);
        auto [kept, excluded] = filter_by_length(vocab, samples, max_context);
        std::cout << "kept: " << kept.size() << "\nexcluded: " << excluded.size() << "\n";
    }
    return kExitOk;
}

std::vector<TokenStream> pretrain_streams(const Vocab& vocab,
                                          const std::vector<Sample>& samples,
                                          bool normalize, uint64_t seed, size_t* dropped) {
    NormalizationConfig ncfg;
    ncfg.canonicalize = true;
    ncfg.rename_registers = true;
    ncfg.randomize_addresses = true;
    ncfg.rng_seed = seed;

    std::vector<TokenStream> streams;
    *dropped = 0;
    for (const auto& s : samples) {
        for (Role role : {input_role(s.task), output_role(s.task)}) {
            const std::string& text = role == input_role(s.task) ? s.input_text
                                                                 : s.output_text;
            std::string prepared =
                (role == Role::Assembly && normalize) ? normalize_asm(text, ncfg) : text;
            TokenStream ts = format_pretrain_stream(vocab, prepared, role);
            if (ts.size() > vocab.max_context()) {
                ++*dropped;
                continue;
            }
            streams.push_back(std::move(ts));
        }
    }
    return streams;
}

int run_pretrain(CLI::App* cmd, const std::string& corpus_path, const std::string& out_path,
                 const std::string& config_path, const TrainConfig& flag_cfg,
                 ModelConfig mcfg, bool normalize, const std::string& loss_csv,
                 const std::vector<std::string>& argv) {
    TrainConfig cfg = resolve_train_config(cmd, config_path, flag_cfg, false);
    auto samples = ingest_jsonl(corpus_path);
    if (samples.empty()) throw std::runtime_error("corpus is empty: " + corpus_path);

    Vocab vocab = Vocab::build_default(mcfg.max_context);
    mcfg.vocab_size = vocab.size();
    mcfg.validate();

    size_t dropped = 0;
    auto streams = pretrain_streams(vocab, samples, normalize, cfg.seed, &dropped);
    if (streams.empty()) throw std::runtime_error("no streams fit the context limit");

    BackboneParams backbone = BackboneParams::init(mcfg, cfg.seed);
    CheckpointHook hook = [&](size_t step) {
        save_backbone(out_path + ".step" + std::to_string(step), backbone, vocab);
    };
    TrainResult result = pretrain_clm(backbone, streams, cfg, hook);
    save_backbone(out_path, backbone, vocab);
    if (!loss_csv.empty()) write_loss_csv(loss_csv, result.loss_history, cfg);

    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.argv = argv;
    manifest.resolved_config = cfg.to_json();
    manifest.resolved_config["model"] = mcfg.to_json();
    manifest.resolved_config["normalize_asm"] = normalize;
    manifest.seed = cfg.seed;
    manifest.add_input(corpus_path);
    manifest.write(out_path);

    std::cout << "streams: " << streams.size() << " (dropped " << dropped << ")\n";
    if (!result.loss_history.empty())
        std::cout << "loss: " << result.loss_history.front() << " -> "
                  << result.loss_history.back() << "\n";
    std::cout << "checkpoint written to " << out_path << "\n";
    return kExitOk;
}

int run_finetune(CLI::App* cmd, const std::string& strategy_str,
                 const std::string& backbone_path, const std::string& data_path,
                 const std::string& out_path, const std::string& config_path,
                 const TrainConfig& flag_cfg, AdaptationConfig acfg,
                 const std::string& loss_csv, const std::vector<std::string>& argv) {
    TrainConfig cfg = resolve_train_config(cmd, config_path, flag_cfg, true);
    acfg.strategy = parse_strategy(strategy_str);

    auto loaded = load_backbone(backbone_path);
    loaded.backbone.frozen = true;
    auto samples = ingest_jsonl(data_path);
    if (samples.empty()) throw std::runtime_error("fine-tuning data is empty: " + data_path);

    auto [kept, excluded] =
        filter_by_length(loaded.vocab, samples, loaded.backbone.config.max_context,
                         acfg.n_prefix);
    if (kept.empty()) throw std::runtime_error("no samples fit the context limit");

    AdaptationState state = init_adaptation(loaded.backbone, acfg, cfg.seed);
    CheckpointHook hook = [&](size_t step) {
        save_adaptation(out_path + ".step" + std::to_string(step), state);
    };
    TrainResult result = finetune(loaded.backbone, state, kept, loaded.vocab, cfg, hook);
    save_adaptation(out_path, state);
    if (!loss_csv.empty()) write_loss_csv(loss_csv, result.loss_history, cfg);

    RunManifest manifest;
    manifest.command = "finetune";
    manifest.argv = argv;
    manifest.resolved_config = cfg.to_json();
    manifest.resolved_config["adaptation"] = acfg.to_json();
    manifest.seed = cfg.seed;
    manifest.add_input(backbone_path);
    manifest.add_input(data_path);
    manifest.write(out_path);

    std::cout << "trained on " << kept.size() << " samples (excluded " << excluded.size()
              << ")\n";
    if (!result.loss_history.empty())
        std::cout << "loss: " << result.loss_history.front() << " -> "
                  << result.loss_history.back() << "\n";
    std::cout << "checkpoint written to " << out_path << "\n";
    return kExitOk;
}

int run_translate(const std::string& task_str, const std::string& in_path,
                  const std::string& backbone_path, const std::string& adapt_path,
                  const std::string& out_path, size_t max_new, const std::string& mode_str,
                  double temperature, uint64_t seed,
                  const std::vector<std::string>& argv) {
    auto task = parse_task(task_str);
    if (!task) throw UsageError("--task must be asm2src or src2asm");

    LoadedBundle bundle = load_bundle(backbone_path, adapt_path);
    if (bundle.adapt) *bundle.adapt = select_task(*bundle.adapt, *task);

    std::string input = read_text_input(in_path);
    Strategy strategy = bundle.adapt ? bundle.adapt->config.strategy : Strategy::MultiAdapter;
    size_t n_prefix = bundle.adapt ? bundle.adapt->config.n_prefix : 1;
    auto prompt = format_prompt(bundle.backbone.vocab, input, *task, strategy, n_prefix);
    size_t ctx = bundle.backbone.backbone.config.max_context;
    check_prompt_length(prompt.size(), ctx);

    GenOptions opts;
    opts.route = *task;
    opts.max_new = max_new == 0 ? ctx - prompt.size() : std::min(max_new, ctx - prompt.size());
    if (mode_str == "sample") {
        opts.mode = DecodeMode::Sampled;
        opts.seed = seed;
        opts.temperature = temperature;
    } else if (mode_str != "greedy") {
        throw UsageError("--mode must be greedy or sample");
    }

    GenResult gen = generate(bundle.backbone.backbone,
                             bundle.adapt ? &*bundle.adapt : nullptr, prompt, opts);
    TokenStream out_stream;
    out_stream.source_role = output_role(*task);
    for (size_t i = gen.prompt_len; i < gen.ids.size(); ++i)
        if (gen.ids[i] != Vocab::EOS) out_stream.ids.push_back(gen.ids[i]);
    std::string translation = decode(bundle.backbone.vocab, out_stream);

    write_text_output(out_path, translation);
    if (!out_path.empty() && out_path != "-") {
        RunManifest manifest;
        manifest.command = "translate";
        manifest.argv = argv;
        manifest.resolved_config = {{"task", task_str},
                                    {"mode", mode_str},
                                    {"max_new", opts.max_new},
                                    {"temperature", temperature}};
        manifest.seed = seed;
        manifest.add_input(backbone_path);
        if (!adapt_path.empty()) manifest.add_input(adapt_path);
        if (in_path != "-") manifest.add_input(in_path);
        manifest.write(out_path);
    }
    return kExitOk;
}

int run_eval(const std::string& data_path, const std::string& backbone_path,
             const std::string& adapt_path, const std::string& metrics_csv,
             const std::string& report_json, const std::string& report_csv,
             SandboxConfig sandbox, const std::string& unit_str, uint64_t seed,
             bool use_expected, const std::vector<std::string>& argv) {
    LoadedBundle bundle = load_bundle(backbone_path, adapt_path);
    auto samples = ingest_jsonl(data_path);
    MetricSelection metrics = MetricSelection::parse(metrics_csv);

    EvalOptions opts;
    opts.seed = seed;
    if (unit_str == "token") opts.unit = EvalOptions::Unit::Token;
    else if (unit_str != "char") throw UsageError("--unit must be char or token");
    if (use_expected) {
        for (const auto& rec : read_jsonl_records(data_path)) {
            if (rec.contains("id") && rec.contains("expected_exit"))
                opts.expected_exit[rec["id"].get<std::string>()] =
                    rec["expected_exit"].get<int>();
        }
    }

    EvalReport report = evaluate_corpus(bundle.view(), samples, metrics, sandbox, opts);

    if (!report_json.empty()) write_text_output(report_json, report.to_json());
    if (!report_csv.empty()) write_text_output(report_csv, report.to_csv());
    for (const std::string& path : {report_json, report_csv}) {
        if (path.empty() || path == "-") continue;
        RunManifest manifest;
        manifest.command = "eval";
        manifest.argv = argv;
        manifest.resolved_config = {{"metrics", metrics_csv},
                                    {"unit", unit_str},
                                    {"compiler", sandbox.compile_command},
                                    {"time_limit_sec", sandbox.time_limit_sec},
                                    {"memory_limit_bytes", sandbox.memory_limit_bytes},
                                    {"jobs", sandbox.jobs}};
        manifest.seed = seed;
        manifest.add_input(data_path);
        manifest.add_input(backbone_path);
        if (!adapt_path.empty()) manifest.add_input(adapt_path);
        manifest.write(path);
    }

    auto show = [](const char* name, const std::optional<double>& v) {
        std::cout << name << ": ";
        if (v) std::cout << *v;
        else std::cout << "-";
        std::cout << "\n";
    };
    std::cout << "evaluated: " << report.overall.evaluated << "\n";
    show("mean_edit_sim", report.overall.mean_edit_sim);
    show("mean_sem_sim", report.overall.mean_sem_sim);
    show("reexec_rate", report.overall.reexec_rate);
    show("perplexity", report.overall.perplexity);
    return kExitOk;
}

int run_compare_ppl(const std::string& corpus_path, const std::string& backbone_path,
                    const std::string& adapt_path, const std::string& out_path,
                    const std::vector<std::string>& argv) {
    LoadedBundle bundle = load_bundle(backbone_path, adapt_path);
    if (!bundle.adapt) throw UsageError("compare-ppl requires --adaptation");
    auto samples = ingest_jsonl(corpus_path);
    auto [kept, excluded] = filter_by_length(bundle.backbone.vocab, samples,
                                             bundle.backbone.backbone.config.max_context,
                                             bundle.adapt->config.n_prefix);
    if (kept.empty()) throw std::runtime_error("no samples fit the context limit");

    std::vector<TokenStream> streams;
    std::vector<Task> routes;
    for (const auto& s : kept) {
        PairEncoding enc = format_pair(bundle.backbone.vocab, s,
                                       bundle.adapt->config.strategy,
                                       bundle.adapt->config.n_prefix);
        TokenStream ts;
        ts.ids = std::move(enc.ids);
        ts.source_role = input_role(s.task);
        streams.push_back(std::move(ts));
        routes.push_back(s.task);
    }

    Bundle base{&bundle.backbone.backbone, nullptr, &bundle.backbone.vocab};
    Bundle adapted = bundle.view();
    PplComparison cmp = compare_perplexity(base, adapted, streams, &routes);

    json j = {{"ppl_base", cmp.ppl_base},
              {"ppl_adapted", cmp.ppl_adapted},
              {"delta", cmp.delta}};
    std::string text = j.dump(2) + "\n";
    write_text_output(out_path, text);
    if (out_path.empty() || out_path == "-") {
        // already printed
    } else {
        RunManifest manifest;
        manifest.command = "compare-ppl";
        manifest.argv = argv;
        manifest.resolved_config = {{"corpus", corpus_path}};
        manifest.add_input(corpus_path);
        manifest.add_input(backbone_path);
        manifest.add_input(adapt_path);
        manifest.write(out_path);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> argv_vec(argv, argv + argc);
    CLI::App app{"bidirectional assembly<->source translation pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    // gen
    auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic paired corpus");
    size_t gen_n = 0;
    uint64_t gen_seed = 0;
    std::string gen_out;
    gen_cmd->add_option("--n", gen_n, "number of programs (two samples each)")->required();
    gen_cmd->add_option("--seed", gen_seed, "rng seed");
    gen_cmd->add_option("--out", gen_out, "output JSONL path")->required();

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "validate a JSONL corpus");
    std::string ingest_in;
    ingest_cmd->add_option("--in", ingest_in, "corpus JSONL path")->required();

    // normalize
    auto* norm_cmd = app.add_subcommand("normalize", "normalize assembly text");
    std::string norm_in = "-", norm_out = "-";
    NormalizationConfig norm_cfg;
    bool norm_no_canon = false;
    norm_cmd->add_option("--in", norm_in, "input file or - for stdin");
    norm_cmd->add_option("--out", norm_out, "output file or - for stdout");
    norm_cmd->add_flag("--no-canonicalize", norm_no_canon, "skip canonicalization");
    norm_cmd->add_flag("--rename-registers", norm_cfg.rename_registers,
                       "rename registers to REG<n>");
    norm_cmd->add_flag("--randomize-addresses", norm_cfg.randomize_addresses,
                       "replace address literals with ADDR_<n>");
    norm_cmd->add_option("--seed", norm_cfg.rng_seed, "address pool seed");

    // tokenize
    auto* tok_cmd = app.add_subcommand("tokenize", "build vocab / count tokens / filter");
    std::string tok_vocab_out, tok_in, tok_role = "src", tok_corpus;
    size_t tok_max_context = 1024;
    tok_cmd->add_option("--vocab-out", tok_vocab_out, "write vocab JSON here");
    tok_cmd->add_option("--in", tok_in, "text file to count tokens for");
    tok_cmd->add_option("--role", tok_role, "asm or src")
        ->check(CLI::IsMember({"asm", "src"}));
    tok_cmd->add_option("--corpus", tok_corpus, "JSONL corpus to length-filter");
    tok_cmd->add_option("--max-context", tok_max_context, "context limit (default 1024)");

    // shared training flags
    auto add_train_flags = [](CLI::App* cmd, TrainConfig& cfg, std::string& config_path,
                              std::string& loss_csv) {
        cmd->add_option("--config", config_path, "training config JSON");
        cmd->add_option("--steps", cfg.max_steps, "optimizer steps");
        cmd->add_option("--batch-size", cfg.batch_size, "micro-batch size");
        cmd->add_option("--accum", cfg.grad_accum_steps, "gradient accumulation steps");
        cmd->add_option("--lr", cfg.learning_rate, "learning rate");
        cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
        cmd->add_option("--seed", cfg.seed, "rng seed");
        cmd->add_option("--warmup", cfg.warmup_steps, "linear warmup steps");
        cmd->add_option("--save-every", cfg.checkpoint_every,
                        "write <out>.step<N> checkpoints every N steps (0 = off)");
        cmd->add_option("--max-grad-norm", cfg.max_grad_norm, "gradient clip (0 = off)");
        cmd->add_option("--threads", cfg.threads, "micro-batch worker threads");
        cmd->add_option("--loss-csv", loss_csv, "write per-step loss history CSV");
    };

    // pretrain
    auto* pre_cmd = app.add_subcommand("pretrain", "CLM-pretrain a backbone");
    std::string pre_corpus, pre_out, pre_config, pre_loss_csv;
    TrainConfig pre_cfg;
    pre_cfg.max_steps = 200;
    ModelConfig pre_mcfg;
    bool pre_no_normalize = false;
    pre_cmd->add_option("--corpus", pre_corpus, "JSONL corpus")->required();
    pre_cmd->add_option("--out", pre_out, "backbone checkpoint path")->required();
    add_train_flags(pre_cmd, pre_cfg, pre_config, pre_loss_csv);
    pre_cmd->add_option("--d-model", pre_mcfg.d_model, "model width (default 128)");
    pre_cmd->add_option("--n-layers", pre_mcfg.n_layers, "transformer blocks (default 4)");
    pre_cmd->add_option("--n-heads", pre_mcfg.n_heads, "attention heads (default 4)");
    pre_cmd->add_option("--d-ff", pre_mcfg.d_ff, "feed-forward width (default 512)");
    pre_cmd->add_option("--max-context", pre_mcfg.max_context, "context limit (default 1024)");
    pre_cmd->add_option("--dropout", pre_mcfg.dropout, "dropout probability (default 0)");
    pre_cmd->add_flag("--tie-embeddings", pre_mcfg.tie_embeddings,
                      "tie output head to token embeddings");
    pre_cmd->add_flag("--no-normalize-asm", pre_no_normalize,
                      "skip assembly normalization of pretraining text");

    // finetune
    auto* ft_cmd = app.add_subcommand("finetune", "fine-tune adaptation parameters");
    std::string ft_strategy, ft_backbone, ft_data, ft_out, ft_config, ft_loss_csv;
    TrainConfig ft_cfg;
    ft_cfg.max_steps = 300;
    AdaptationConfig ft_acfg;
    bool ft_no_lora = false;
    ft_cmd->add_option("--strategy", ft_strategy, "ma or s2s")
        ->required()
        ->check(CLI::IsMember({"ma", "s2s"}));
    ft_cmd->add_option("--backbone", ft_backbone, "backbone checkpoint")->required();
    ft_cmd->add_option("--data", ft_data, "paired JSONL data")->required();
    ft_cmd->add_option("--out", ft_out, "adaptation checkpoint path")->required();
    add_train_flags(ft_cmd, ft_cfg, ft_config, ft_loss_csv);
    ft_cmd->add_option("--r-adapter", ft_acfg.r_adapter, "adapter bottleneck (default 8)");
    ft_cmd->add_option("--r-lora", ft_acfg.r_lora, "LoRA rank (default 4)");
    ft_cmd->add_option("--lora-alpha", ft_acfg.lora_alpha, "LoRA alpha (default = rank)");
    ft_cmd->add_option("--n-prefix", ft_acfg.n_prefix, "prefix vectors per task (default 1)");
    ft_cmd->add_flag("--no-lora", ft_no_lora, "disable LoRA deltas");

    // translate
    auto* tr_cmd = app.add_subcommand("translate", "translate one input");
    std::string tr_task, tr_in = "-", tr_backbone, tr_adapt, tr_out, tr_mode = "greedy";
    size_t tr_max_new = 0;
    double tr_temp = 1.0;
    uint64_t tr_seed = 0;
    tr_cmd->add_option("--task", tr_task, "asm2src or src2asm")->required();
    tr_cmd->add_option("--in", tr_in, "input file or - for stdin");
    tr_cmd->add_option("--backbone", tr_backbone, "backbone checkpoint")->required();
    tr_cmd->add_option("--adaptation", tr_adapt, "adaptation checkpoint");
    tr_cmd->add_option("--out", tr_out, "output file (default stdout)");
    tr_cmd->add_option("--max-new", tr_max_new, "max generated tokens (default: to limit)");
    tr_cmd->add_option("--mode", tr_mode, "greedy or sample");
    tr_cmd->add_option("--temperature", tr_temp, "sampling temperature");
    tr_cmd->add_option("--seed", tr_seed, "sampling seed");

    // eval
    auto* ev_cmd = app.add_subcommand("eval", "evaluate a model over a corpus");
    std::string ev_data, ev_backbone, ev_adapt, ev_metrics = "edit,sem";
    std::string ev_json, ev_csv, ev_unit = "char";
    SandboxConfig ev_sandbox;
    uint64_t ev_seed = 0;
    bool ev_expected = false;
    ev_cmd->add_option("--data", ev_data, "paired JSONL data")->required();
    ev_cmd->add_option("--backbone", ev_backbone, "backbone checkpoint")->required();
    ev_cmd->add_option("--adaptation", ev_adapt, "adaptation checkpoint");
    ev_cmd->add_option("--metrics", ev_metrics, "subset of edit,sem,reexec,ppl");
    ev_cmd->add_option("--report-json", ev_json, "JSON report path");
    ev_cmd->add_option("--report-csv", ev_csv, "CSV report path");
    ev_cmd->add_option("--compiler", ev_sandbox.compile_command,
                       "compile template with {src} and {out}");
    ev_cmd->add_option("--time-limit", ev_sandbox.time_limit_sec, "seconds (default 5)");
    ev_cmd->add_option("--mem-limit", ev_sandbox.memory_limit_bytes,
                       "bytes (default 256 MiB)");
    ev_cmd->add_option("--jobs", ev_sandbox.jobs, "parallel evaluation jobs");
    ev_cmd->add_option("--unit", ev_unit, "edit-similarity unit: char or token");
    ev_cmd->add_option("--seed", ev_seed, "seed recorded in the report");
    ev_cmd->add_flag("--expect-exit", ev_expected,
                     "check exit codes against the corpus expected_exit field");

    // compare-ppl
    auto* cp_cmd = app.add_subcommand("compare-ppl",
                                      "perplexity of base vs adapted on a corpus");
    std::string cp_corpus, cp_backbone, cp_adapt, cp_out = "-";
    cp_cmd->add_option("--corpus", cp_corpus, "paired JSONL data")->required();
    cp_cmd->add_option("--backbone", cp_backbone, "backbone checkpoint")->required();
    cp_cmd->add_option("--adaptation", cp_adapt, "adaptation checkpoint")->required();
    cp_cmd->add_option("--out", cp_out, "output JSON path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen_cmd->parsed())
            return run_gen(gen_n, gen_seed, gen_out, argv_vec);
        if (ingest_cmd->parsed())
            return run_ingest(ingest_in);
        if (norm_cmd->parsed()) {
            norm_cfg.canonicalize = !norm_no_canon;
            return run_normalize(norm_in, norm_out, norm_cfg, argv_vec);
        }
        if (tok_cmd->parsed())
            return run_tokenize(tok_vocab_out, tok_in, tok_role, tok_corpus,
                                tok_max_context, argv_vec);
        if (pre_cmd->parsed())
            return run_pretrain(pre_cmd, pre_corpus, pre_out, pre_config, pre_cfg, pre_mcfg,
                                !pre_no_normalize, pre_loss_csv, argv_vec);
        if (ft_cmd->parsed()) {
            ft_acfg.use_lora = !ft_no_lora;
            return run_finetune(ft_cmd, ft_strategy, ft_backbone, ft_data, ft_out, ft_config,
                                ft_cfg, ft_acfg, ft_loss_csv, argv_vec);
        }
        if (tr_cmd->parsed())
            return run_translate(tr_task, tr_in, tr_backbone, tr_adapt, tr_out, tr_max_new,
                                 tr_mode, tr_temp, tr_seed, argv_vec);
        if (ev_cmd->parsed())
            return run_eval(ev_data, ev_backbone, ev_adapt, ev_metrics, ev_json, ev_csv,
                            ev_sandbox, ev_unit, ev_seed, ev_expected, argv_vec);
        if (cp_cmd->parsed())
            return run_compare_ppl(cp_corpus, cp_backbone, cp_adapt, cp_out, argv_vec);
        std::cerr << "no subcommand given\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const EnvUnavailableError& e) {
        std::cerr << "environment unavailable: " << e.what() << "\n";
        return kExitEnv;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
