// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "retrans/task.hpp"

namespace retrans {

// One paired training/eval instance. `task` determines which of input/output
// is assembly: AsmToSrc has assembly input and source output, SrcToAsm the
// reverse. Both texts are non-empty.
struct Sample {
    std::string input_text;
    std::string output_text;
    Task task = Task::AsmToSrc;
    std::string id;

    bool operator==(const Sample&) const = default;
};

struct NormalizationConfig {
    bool canonicalize = true;
    bool rename_registers = false;
    bool randomize_addresses = false;
    uint64_t rng_seed = 0;
};

// Raised for unreadable or malformed corpus files; the message names the file
// and, where applicable, the 1-based line.
class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reads a JSONL corpus: one object per line with keys "src", "asm",
// "task" ("asm2src" | "src2asm") and optional "id". Unknown keys are
// ignored. Blank lines are skipped. Throws IngestError naming the offending
// line on malformed JSON, missing/empty fields, or an unknown task tag.
std::vector<Sample> ingest_jsonl(const std::string& path);

// Writes samples in the same JSONL schema; ingest_jsonl(write_jsonl(x)) == x.
void write_jsonl(const std::string& path, const std::vector<Sample>& samples);

// Normalizes newline-separated assembly text.
//
// canonicalize: collapses whitespace runs to a single space, trims line ends,
//   attaches commas to the preceding token with one space after, keeps no
//   space after '[' / '(' nor before ']' / ')', and lower-cases every token
//   (this covers mnemonics, registers and hex literals such as 0X1F -> 0x1f).
//   REG<n> / ADDR_<n> placeholders are left untouched so the pass is
//   idempotent. Text after ';' is preserved verbatim as a comment.
// rename_registers: maps recognized register names to REG0, REG1, ... in
//   first-appearance order, one bijection per input; matching is
//   case-insensitive so EAX and eax share a placeholder.
// randomize_addresses: replaces hex literals >= 0x1000 with ADDR_<k>
//   placeholders drawn from a pool shuffled by rng_seed; equal literal values
//   always map to the same placeholder within one call.
//
// Unrecognized lines pass through (after whitespace canonicalization when
// enabled). Output is byte-deterministic given (input, cfg).
std::string normalize_asm(const std::string& asm_text, const NormalizationConfig& cfg);

} // namespace retrans
