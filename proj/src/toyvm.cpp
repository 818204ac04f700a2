// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/toyvm.hpp"

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

namespace retrans {

namespace {

struct Operand {
    bool is_reg = false;
    int reg = 0;
    int64_t imm = 0;
};

enum class Op { Mov, Add, Sub, Mul, Cmp, Jmp, Jz, Ret };

struct Insn {
    Op op;
    int dst = 0;          // register index for mov/add/sub/mul/cmp/ret
    Operand src;          // second operand
    std::string target;   // label or absolute index for jmp/jz
    size_t line = 0;
};

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::optional<int> parse_reg(const std::string& tok) {
    if (tok.size() == 2 && tok[0] == 'r' && tok[1] >= '0' && tok[1] <= '7')
        return tok[1] - '0';
    return std::nullopt;
}

std::optional<int64_t> parse_imm(const std::string& tok) {
    if (tok.empty()) return std::nullopt;
    size_t i = tok[0] == '-' ? 1 : 0;
    if (i == tok.size()) return std::nullopt;
    int base = 10;
    if (tok.size() > i + 2 && tok[i] == '0' && (tok[i + 1] == 'x' || tok[i + 1] == 'X')) {
        base = 16;
        i += 2;
    }
    uint64_t value = 0;
    for (; i < tok.size(); ++i) {
        char c = std::tolower(static_cast<unsigned char>(tok[i]));
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (base == 16 && c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else return std::nullopt;
        value = value * uint64_t(base) + uint64_t(d);
    }
    int64_t v = static_cast<int64_t>(value);
    return tok[0] == '-' ? -v : v;
}

Operand parse_operand(const std::string& tok, size_t line_no) {
    Operand o;
    if (auto r = parse_reg(tok)) {
        o.is_reg = true;
        o.reg = *r;
        return o;
    }
    if (auto v = parse_imm(tok)) {
        o.imm = *v;
        return o;
    }
    throw ToyVmError(ToyVmError::Kind::BadOperand,
                     "line " + std::to_string(line_no) + ": bad operand \"" + tok + "\"");
}

} // namespace

int run_toy_vm(const std::string& asm_text, size_t budget) {
    std::vector<Insn> program;
    std::unordered_map<std::string, size_t> labels;

    // First pass: parse instructions and collect label -> instruction index.
    size_t line_no = 0;
    size_t start = 0;
    while (start <= asm_text.size()) {
        size_t nl = asm_text.find('\n', start);
        std::string line = asm_text.substr(
            start, nl == std::string::npos ? std::string::npos : nl - start);
        ++line_no;
        start = (nl == std::string::npos) ? asm_text.size() + 1 : nl + 1;

        size_t semi = line.find(';');
        if (semi != std::string::npos) line.resize(semi);
        auto fields = split_fields(line);
        if (fields.empty()) continue;

        if (fields.size() == 1 && fields[0].size() > 1 && fields[0].back() == ':') {
            labels[fields[0].substr(0, fields[0].size() - 1)] = program.size();
            continue;
        }

        auto need = [&](size_t n) {
            if (fields.size() != n + 1)
                throw ToyVmError(ToyVmError::Kind::BadOperand,
                                 "line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(n) + " operand(s)");
        };
        auto need_reg = [&](const std::string& tok) {
            auto r = parse_reg(tok);
            if (!r)
                throw ToyVmError(ToyVmError::Kind::BadOperand,
                                 "line " + std::to_string(line_no) +
                                     ": expected register, got \"" + tok + "\"");
            return *r;
        };

        Insn insn;
        insn.line = line_no;
        const std::string& m = fields[0];
        if (m == "mov" || m == "add" || m == "sub" || m == "mul" || m == "cmp") {
            need(2);
            insn.op = m == "mov"   ? Op::Mov
                      : m == "add" ? Op::Add
                      : m == "sub" ? Op::Sub
                      : m == "mul" ? Op::Mul
                                   : Op::Cmp;
            insn.dst = need_reg(fields[1]);
            insn.src = parse_operand(fields[2], line_no);
        } else if (m == "jmp" || m == "jz") {
            need(1);
            insn.op = m == "jmp" ? Op::Jmp : Op::Jz;
            insn.target = fields[1];
        } else if (m == "ret") {
            need(1);
            insn.op = Op::Ret;
            insn.dst = need_reg(fields[1]);
        } else {
            throw ToyVmError(ToyVmError::Kind::UnknownInstruction,
                             "line " + std::to_string(line_no) +
                                 ": unknown instruction \"" + m + "\"");
        }
        program.push_back(std::move(insn));
    }

    auto resolve_target = [&](const Insn& insn) -> size_t {
        auto it = labels.find(insn.target);
        if (it != labels.end()) return it->second;
        if (auto idx = parse_imm(insn.target); idx && *idx >= 0) return size_t(*idx);
        throw ToyVmError(ToyVmError::Kind::BadOperand,
                         "line " + std::to_string(insn.line) + ": unknown jump target \"" +
                             insn.target + "\"");
    };

    // Wrapping arithmetic via uint64_t; registers are observably int64.
    std::array<uint64_t, 8> regs{};
    bool zero_flag = false;
    size_t pc = 0;
    size_t executed = 0;

    while (pc < program.size()) {
        if (++executed > budget)
            throw ToyVmError(ToyVmError::Kind::BudgetExceeded,
                             "instruction budget of " + std::to_string(budget) + " exceeded");
        const Insn& insn = program[pc];
        uint64_t src = insn.src.is_reg ? regs[size_t(insn.src.reg)]
                                       : uint64_t(insn.src.imm);
        switch (insn.op) {
        case Op::Mov: regs[size_t(insn.dst)] = src; ++pc; break;
        case Op::Add: regs[size_t(insn.dst)] += src; ++pc; break;
        case Op::Sub: regs[size_t(insn.dst)] -= src; ++pc; break;
        case Op::Mul: regs[size_t(insn.dst)] *= src; ++pc; break;
        case Op::Cmp: zero_flag = (regs[size_t(insn.dst)] == src); ++pc; break;
        case Op::Jmp: pc = resolve_target(insn); break;
        case Op::Jz:  pc = zero_flag ? resolve_target(insn) : pc + 1; break;
        case Op::Ret: return int(regs[size_t(insn.dst)] & 0xffu);
        }
    }
    return int(regs[0] & 0xffu);
}

} // namespace retrans
