// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "retrans/asmdict.hpp"
#include "retrans/rng.hpp"

namespace retrans {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$';
}

bool is_placeholder(const std::string& tok) {
    auto digits_after = [&](size_t off) {
        if (off >= tok.size()) return false;
        return std::all_of(tok.begin() + long(off), tok.end(),
                           [](unsigned char c) { return std::isdigit(c); });
    };
    if (tok.rfind("REG", 0) == 0) return digits_after(3);
    if (tok.rfind("ADDR_", 0) == 0) return digits_after(5);
    return false;
}

bool is_hex_literal(const std::string& tok) {
    if (tok.size() < 3) return false;
    if (tok[0] != '0' || (tok[1] != 'x' && tok[1] != 'X')) return false;
    return std::all_of(tok.begin() + 2, tok.end(),
                       [](unsigned char c) { return std::isxdigit(c); });
}

struct Token {
    size_t pos;
    size_t len;
    bool word; // identifier/number run vs single punctuation char
};

// Splits the code portion of a line into word runs and punctuation; skips
// whitespace. Offsets refer to the input string.
std::vector<Token> lex_line(const std::string& line, size_t begin, size_t end) {
    std::vector<Token> out;
    size_t i = begin;
    while (i < end) {
        char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            size_t j = i;
            while (j < end && is_word_char(line[j])) ++j;
            out.push_back({i, j - i, true});
            i = j;
        } else {
            out.push_back({i, 1, false});
            ++i;
        }
    }
    return out;
}

std::string render_canonical(const std::string& line, size_t code_end) {
    auto toks = lex_line(line, 0, code_end);
    std::string out;
    for (size_t k = 0; k < toks.size(); ++k) {
        std::string t = line.substr(toks[k].pos, toks[k].len);
        if (toks[k].word && !is_placeholder(t)) t = lower(t);
        if (!out.empty()) {
            char prev = out.back();
            bool no_space = (t == ",") || (t == "]") || (t == ")") ||
                            prev == '[' || prev == '(' || prev == ' ';
            if (!no_space) out.push_back(' ');
        }
        out += t;
        if (t == ",") out.push_back(' ');
    }
    // A trailing comma leaves one space; trim it.
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

} // namespace

std::string normalize_asm(const std::string& asm_text, const NormalizationConfig& cfg) {
    // Per-input state: one register bijection and one address map for the
    // whole call, shared across lines.
    std::unordered_map<std::string, std::string> reg_map;
    std::unordered_map<uint64_t, std::string> addr_map;
    std::vector<uint32_t> addr_pool;
    if (cfg.randomize_addresses) {
        addr_pool.resize(4096);
        for (uint32_t i = 0; i < addr_pool.size(); ++i) addr_pool[i] = i;
        Rng rng(cfg.rng_seed);
        rng.shuffle(addr_pool);
    }

    auto addr_placeholder = [&](uint64_t value) -> const std::string& {
        auto it = addr_map.find(value);
        if (it != addr_map.end()) return it->second;
        size_t k = addr_map.size();
        uint64_t slot = k < addr_pool.size() ? addr_pool[k] : k;
        return addr_map.emplace(value, "ADDR_" + std::to_string(slot)).first->second;
    };

    auto reg_placeholder = [&](const std::string& lower_name) -> const std::string& {
        auto it = reg_map.find(lower_name);
        if (it != reg_map.end()) return it->second;
        size_t k = reg_map.size();
        return reg_map.emplace(lower_name, "REG" + std::to_string(k)).first->second;
    };

    // Pass 1: split lines, canonicalize code parts.
    struct Line {
        std::string code;
        std::string comment;
    };
    std::vector<Line> lines;
    size_t start = 0;
    while (true) {
        size_t nl = asm_text.find('\n', start);
        std::string line = asm_text.substr(
            start, nl == std::string::npos ? std::string::npos : nl - start);

        size_t code_end = line.find(';');
        std::string comment =
            code_end == std::string::npos ? "" : line.substr(code_end);
        if (code_end == std::string::npos) code_end = line.size();

        std::string code = line.substr(0, code_end);
        if (cfg.canonicalize) code = render_canonical(line, code_end);
        lines.push_back({std::move(code), std::move(comment)});

        if (nl == std::string::npos) break;
        start = nl + 1;
    }

    if (cfg.rename_registers || cfg.randomize_addresses) {
        // Pass 2: build the maps in strict first-appearance order.
        for (const Line& ln : lines) {
            for (const Token& tok : lex_line(ln.code, 0, ln.code.size())) {
                if (!tok.word) continue;
                std::string t = ln.code.substr(tok.pos, tok.len);
                std::string low = lower(t);
                if (cfg.rename_registers && is_known_register(low)) {
                    reg_placeholder(low);
                } else if (cfg.randomize_addresses && is_hex_literal(t)) {
                    uint64_t value = std::stoull(t.substr(2), nullptr, 16);
                    if (value >= 0x1000) addr_placeholder(value);
                }
            }
        }
        // Pass 3: substitute right to left so earlier offsets stay valid.
        for (Line& ln : lines) {
            auto toks = lex_line(ln.code, 0, ln.code.size());
            for (size_t k = toks.size(); k-- > 0;) {
                if (!toks[k].word) continue;
                std::string t = ln.code.substr(toks[k].pos, toks[k].len);
                std::string low = lower(t);
                if (cfg.rename_registers && is_known_register(low)) {
                    ln.code.replace(toks[k].pos, toks[k].len, reg_placeholder(low));
                } else if (cfg.randomize_addresses && is_hex_literal(t)) {
                    uint64_t value = std::stoull(t.substr(2), nullptr, 16);
                    if (value >= 0x1000)
                        ln.code.replace(toks[k].pos, toks[k].len, addr_placeholder(value));
                }
            }
        }
    }

    std::string out;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i > 0) out.push_back('\n');
        out += lines[i].code;
        if (!lines[i].comment.empty()) {
            if (cfg.canonicalize && !lines[i].code.empty()) out.push_back(' ');
            out += lines[i].comment;
        }
    }
    return out;
}

std::vector<Sample> ingest_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open corpus file: " + path);

    std::vector<Sample> samples;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        auto fail = [&](const std::string& what) {
            throw IngestError(path + ": line " + std::to_string(line_no) + ": " + what);
        };

        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) fail("malformed JSON object");

        for (const char* key : {"src", "asm", "task"}) {
            if (!obj.contains(key) || !obj[key].is_string())
                fail(std::string("missing or non-string key \"") + key + "\"");
        }
        std::string src = obj["src"].get<std::string>();
        std::string asm_text = obj["asm"].get<std::string>();
        auto task = parse_task(obj["task"].get<std::string>());
        if (!task) fail("unknown task tag \"" + obj["task"].get<std::string>() + "\"");
        if (src.empty()) fail("empty \"src\" field");
        if (asm_text.empty()) fail("empty \"asm\" field");

        Sample s;
        s.task = *task;
        s.input_text = (*task == Task::AsmToSrc) ? asm_text : src;
        s.output_text = (*task == Task::AsmToSrc) ? src : asm_text;
        if (obj.contains("id")) {
            if (!obj["id"].is_string()) fail("non-string \"id\"");
            s.id = obj["id"].get<std::string>();
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot open file for writing: " + path);
    for (const auto& s : samples) {
        json obj;
        obj["src"] = s.task == Task::AsmToSrc ? s.output_text : s.input_text;
        obj["asm"] = s.task == Task::AsmToSrc ? s.input_text : s.output_text;
        obj["task"] = task_name(s.task);
        if (!s.id.empty()) obj["id"] = s.id;
        out << obj.dump() << '\n';
    }
    if (!out) throw IngestError("failed writing " + path);
}

} // namespace retrans
