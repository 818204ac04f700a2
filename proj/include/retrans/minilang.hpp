// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace retrans {

// A generated program with executable ground truth: interpreting `source`
// and running `asm` on the toy VM both yield `expected_exit_code`.
struct MiniProgram {
    std::string source;      // compilable C, e.g. "int main(){int a=2;return a*3;}"
    std::string asm_text;    // toy three-address assembly
    int expected_exit_code = 0;
};

class MiniLangError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The mini language: integer constants, +, -, *, local int variables and a
// final return. Accepted with or without the "int main(){...}" wrapper.
namespace mini {

struct Expr {
    enum class Kind { Const, Var, BinOp } kind;
    int64_t value = 0;               // Const
    std::string name;                // Var
    char op = 0;                     // BinOp: '+', '-', '*'
    std::unique_ptr<Expr> lhs, rhs;  // BinOp
};

struct Program {
    std::vector<std::pair<std::string, std::unique_ptr<Expr>>> lets;
    std::unique_ptr<Expr> ret;
};

Program parse(const std::string& source);

// Renders an expression back to source text (fully parenthesized).
std::string to_source(const Expr& e);

// Evaluates the program; the exit code is the return value masked into
// [0, 255] the way process exit statuses are.
int interpret(const Program& program);
int interpret(const std::string& source);

// Compiles to toy assembly. Variables occupy r4-r7 in declaration order,
// expression temporaries r0-r3; throws MiniLangError if either pool runs out
// (the corpus generator stays within both).
std::string compile(const Program& program);
std::string compile(const std::string& source);

} // namespace mini

// Generates n programs with seeded randomness: up to three variables, small
// constants, expression nesting depth at most two. Deterministic per seed.
// Requires n >= 1.
std::vector<MiniProgram> gen_mini_corpus(size_t n, uint64_t rng_seed);

} // namespace retrans
