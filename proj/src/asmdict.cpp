// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/asmdict.hpp"

#include <unordered_set>

namespace retrans {

const std::vector<std::string>& toy_mnemonics() {
    static const std::vector<std::string> v = {
        "mov", "add", "sub", "mul", "jmp", "jz", "cmp", "ret",
    };
    return v;
}

const std::vector<std::string>& default_x86_mnemonics() {
    static const std::vector<std::string> v = {
        "mov",   "movzx", "movsx", "lea",   "push",  "pop",   "add",   "sub",
        "adc",   "sbb",   "inc",   "dec",   "neg",   "mul",   "imul",  "div",
        "idiv",  "and",   "or",    "xor",   "not",   "shl",   "shr",   "sar",
        "sal",   "rol",   "ror",   "cmp",   "test",  "jmp",   "je",    "jne",
        "jz",    "jnz",   "jg",    "jge",   "jl",    "jle",   "ja",    "jae",
        "jb",    "jbe",   "js",    "jns",   "jo",    "jno",   "call",  "ret",
        "leave", "enter", "nop",   "int",   "int3",  "syscall", "cdq", "cqo",
        "xchg",  "cmov",  "cmove", "cmovne", "setz", "setnz", "sete",  "setne",
        "movs",  "stos",  "lods",  "rep",   "repne", "hlt",   "cld",   "std",
    };
    return v;
}

std::vector<std::string> default_mnemonics() {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& list : {toy_mnemonics(), default_x86_mnemonics()}) {
        for (const auto& m : list) {
            if (seen.insert(m).second) out.push_back(m);
        }
    }
    return out;
}

const std::vector<std::string>& known_registers() {
    static const std::vector<std::string> v = [] {
        std::vector<std::string> r;
        // x86-64 GPR families.
        const char* fam[][4] = {
            {"rax", "eax", "ax", "al"},   {"rbx", "ebx", "bx", "bl"},
            {"rcx", "ecx", "cx", "cl"},   {"rdx", "edx", "dx", "dl"},
            {"rsi", "esi", "si", "sil"},  {"rdi", "edi", "di", "dil"},
            {"rbp", "ebp", "bp", "bpl"},  {"rsp", "esp", "sp", "spl"},
        };
        for (auto& f : fam)
            for (int i = 0; i < 4; ++i) r.push_back(f[i]);
        r.insert(r.end(), {"ah", "bh", "ch", "dh"});
        for (int i = 8; i <= 15; ++i) {
            std::string base = "r" + std::to_string(i);
            r.push_back(base);
            r.push_back(base + "d");
            r.push_back(base + "w");
            r.push_back(base + "b");
        }
        for (int i = 0; i <= 15; ++i) r.push_back("xmm" + std::to_string(i));
        // Toy dialect registers r0-r7.
        for (int i = 0; i <= 7; ++i) r.push_back("r" + std::to_string(i));
        return r;
    }();
    return v;
}

bool is_known_register(const std::string& lower_token) {
    static const std::unordered_set<std::string> set = [] {
        std::unordered_set<std::string> s;
        for (const auto& r : known_registers()) s.insert(r);
        return s;
    }();
    return set.count(lower_token) != 0;
}

} // namespace retrans
