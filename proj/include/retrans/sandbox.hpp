// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace retrans {

// Compile-and-run harness configuration. The command template is whitespace-
// split into argv; {src} and {out} substrings are substituted bit-exact and
// both must appear. Each run owns a fresh temporary directory.
struct SandboxConfig {
    std::string compile_command = "gcc -O2 -o {out} {src}";
    double time_limit_sec = 5.0;
    uint64_t memory_limit_bytes = 256ull * 1024 * 1024;
    size_t jobs = 1; // concurrent sandbox runs in corpus evaluation
};

enum class ReexecStage { None, Compile, Timeout, Memory, Crash, Mismatch };
const char* stage_name(ReexecStage s);

struct ReexecResult {
    int score = 0; // 1 iff compiled, ran within limits, and matched `expected`
    ReexecStage stage = ReexecStage::None;
    bool env_unavailable = false; // compiler missing; not a zero score
    int exit_code = -1;           // valid when the program exited normally
    std::string detail;
};

// True when the template's compiler binary resolves (absolute/relative path
// or via PATH).
bool compiler_available(const SandboxConfig& cfg);

// Compiles `source` and executes it under wall-clock, CPU and address-space
// limits. Scores 1 on success; otherwise 0 with the failure stage. When the
// compiler cannot be resolved the result is flagged env_unavailable instead
// of being scored. A non-zero exit code only fails when `expected_exit` is
// given and differs.
ReexecResult reexecutability(const std::string& source, const SandboxConfig& cfg,
                             std::optional<int> expected_exit = std::nullopt);

} // namespace retrans
