// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace retrans {

// Error raised by the toy VM. BudgetExceeded signals non-termination within
// the instruction budget.
class ToyVmError : public std::runtime_error {
public:
    enum class Kind { UnknownInstruction, BadOperand, BudgetExceeded };

    ToyVmError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Executes toy assembly (dialect in docs/toy_assembly.md): registers r0-r7
// (zero-initialized 64-bit), instructions mov/add/sub/mul/cmp/jmp/jz/ret, one
// per line, `;` comments, `name:` labels. Returns the exit code in [0, 255]
// (ret masks its operand to the low 8 bits; falling off the end returns
// r0 & 0xff). Deterministic. Throws ToyVmError on unknown instructions, bad
// operands, or when more than `budget` instructions execute.
int run_toy_vm(const std::string& asm_text, size_t budget = 10000);

} // namespace retrans
