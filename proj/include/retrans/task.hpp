// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

namespace retrans {

// Translation direction for a paired sample.
enum class Task {
    AsmToSrc,
    SrcToAsm,
};

inline const char* task_name(Task t) {
    return t == Task::AsmToSrc ? "asm2src" : "src2asm";
}

inline std::optional<Task> parse_task(const std::string& s) {
    if (s == "asm2src") return Task::AsmToSrc;
    if (s == "src2asm") return Task::SrcToAsm;
    return std::nullopt;
}

inline Task other_task(Task t) {
    return t == Task::AsmToSrc ? Task::SrcToAsm : Task::AsmToSrc;
}

} // namespace retrans
