// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/minilang.hpp"

#include <cctype>
#include <map>
#include <sstream>

#include "retrans/rng.hpp"

namespace retrans {
namespace mini {

namespace {

struct Lexer {
    const std::string& src;
    size_t pos = 0;

    explicit Lexer(const std::string& s) : src(s) {}

    void skip_ws() {
        while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }

    bool eat(const std::string& tok) {
        skip_ws();
        if (src.compare(pos, tok.size(), tok) == 0) {
            // Keywords must not run into identifier characters.
            if (std::isalpha(static_cast<unsigned char>(tok[0]))) {
                size_t end = pos + tok.size();
                if (end < src.size() &&
                    (std::isalnum(static_cast<unsigned char>(src[end])) || src[end] == '_'))
                    return false;
            }
            pos += tok.size();
            return true;
        }
        return false;
    }

    void expect(const std::string& tok) {
        if (!eat(tok))
            throw MiniLangError("expected \"" + tok + "\" at offset " + std::to_string(pos));
    }

    bool peek_ident() {
        skip_ws();
        return pos < src.size() &&
               (std::isalpha(static_cast<unsigned char>(src[pos])) || src[pos] == '_');
    }

    std::string ident() {
        skip_ws();
        size_t start = pos;
        while (pos < src.size() &&
               (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
            ++pos;
        if (pos == start) throw MiniLangError("expected identifier at offset " + std::to_string(start));
        return src.substr(start, pos - start);
    }

    bool peek_digit() {
        skip_ws();
        return pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]));
    }

    int64_t number() {
        skip_ws();
        size_t start = pos;
        while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
        if (pos == start) throw MiniLangError("expected number at offset " + std::to_string(start));
        return std::stoll(src.substr(start, pos - start));
    }

    bool done() {
        skip_ws();
        return pos >= src.size();
    }
};

std::unique_ptr<Expr> make_const(int64_t v) {
    auto e = std::make_unique<Expr>();
    e->kind = Expr::Kind::Const;
    e->value = v;
    return e;
}

std::unique_ptr<Expr> make_var(std::string name) {
    auto e = std::make_unique<Expr>();
    e->kind = Expr::Kind::Var;
    e->name = std::move(name);
    return e;
}

std::unique_ptr<Expr> make_binop(char op, std::unique_ptr<Expr> l, std::unique_ptr<Expr> r) {
    auto e = std::make_unique<Expr>();
    e->kind = Expr::Kind::BinOp;
    e->op = op;
    e->lhs = std::move(l);
    e->rhs = std::move(r);
    return e;
}

std::unique_ptr<Expr> parse_expr(Lexer& lx);

std::unique_ptr<Expr> parse_factor(Lexer& lx) {
    if (lx.eat("(")) {
        auto e = parse_expr(lx);
        lx.expect(")");
        return e;
    }
    if (lx.peek_digit()) return make_const(lx.number());
    if (lx.peek_ident()) return make_var(lx.ident());
    throw MiniLangError("expected factor at offset " + std::to_string(lx.pos));
}

std::unique_ptr<Expr> parse_term(Lexer& lx) {
    auto e = parse_factor(lx);
    while (lx.eat("*")) e = make_binop('*', std::move(e), parse_factor(lx));
    return e;
}

std::unique_ptr<Expr> parse_expr(Lexer& lx) {
    auto e = parse_term(lx);
    for (;;) {
        if (lx.eat("+")) e = make_binop('+', std::move(e), parse_term(lx));
        else if (lx.eat("-")) e = make_binop('-', std::move(e), parse_term(lx));
        else return e;
    }
}

int64_t eval(const Expr& e, const std::map<std::string, int64_t>& env) {
    switch (e.kind) {
    case Expr::Kind::Const: return e.value;
    case Expr::Kind::Var: {
        auto it = env.find(e.name);
        if (it == env.end()) throw MiniLangError("undefined variable \"" + e.name + "\"");
        return it->second;
    }
    case Expr::Kind::BinOp: {
        // Wrapping semantics matching the toy VM.
        uint64_t l = uint64_t(eval(*e.lhs, env));
        uint64_t r = uint64_t(eval(*e.rhs, env));
        uint64_t v = e.op == '+' ? l + r : e.op == '-' ? l - r : l * r;
        return int64_t(v);
    }
    }
    throw MiniLangError("corrupt expression");
}

struct CodeGen {
    std::ostringstream out;
    std::map<std::string, int> var_reg;

    // Evaluates into rd using rd+1.. as scratch; r3 is the last temporary.
    void emit_expr(const Expr& e, int rd) {
        if (rd > 3) throw MiniLangError("expression too deep for the register pool");
        switch (e.kind) {
        case Expr::Kind::Const:
            out << "mov r" << rd << ", " << e.value << "\n";
            return;
        case Expr::Kind::Var: {
            auto it = var_reg.find(e.name);
            if (it == var_reg.end())
                throw MiniLangError("undefined variable \"" + e.name + "\"");
            out << "mov r" << rd << ", r" << it->second << "\n";
            return;
        }
        case Expr::Kind::BinOp: {
            emit_expr(*e.lhs, rd);
            emit_expr(*e.rhs, rd + 1);
            const char* op = e.op == '+' ? "add" : e.op == '-' ? "sub" : "mul";
            out << op << " r" << rd << ", r" << (rd + 1) << "\n";
            return;
        }
        }
    }
};

} // namespace

std::string to_source(const Expr& e) {
    switch (e.kind) {
    case Expr::Kind::Const: return std::to_string(e.value);
    case Expr::Kind::Var: return e.name;
    case Expr::Kind::BinOp:
        return "(" + to_source(*e.lhs) + e.op + to_source(*e.rhs) + ")";
    }
    throw MiniLangError("corrupt expression");
}

Program parse(const std::string& source) {
    Lexer lx(source);
    bool wrapped = false;
    {
        size_t mark = lx.pos;
        if (lx.eat("int") && lx.eat("main") && lx.eat("(") && lx.eat(")") && lx.eat("{")) {
            wrapped = true;
        } else {
            lx.pos = mark;
        }
    }

    Program p;
    for (;;) {
        if (lx.eat("return")) {
            p.ret = parse_expr(lx);
            lx.expect(";");
            break;
        }
        lx.expect("int");
        std::string name = lx.ident();
        lx.expect("=");
        auto e = parse_expr(lx);
        lx.expect(";");
        for (const auto& [existing, _] : p.lets)
            if (existing == name) throw MiniLangError("redeclared variable \"" + name + "\"");
        p.lets.emplace_back(std::move(name), std::move(e));
    }
    if (wrapped) lx.expect("}");
    if (!lx.done()) throw MiniLangError("trailing input at offset " + std::to_string(lx.pos));
    return p;
}

int interpret(const Program& program) {
    std::map<std::string, int64_t> env;
    for (const auto& [name, e] : program.lets) env[name] = eval(*e, env);
    int64_t v = eval(*program.ret, env);
    return int(uint64_t(v) & 0xffu);
}

int interpret(const std::string& source) { return interpret(parse(source)); }

std::string compile(const Program& program) {
    CodeGen cg;
    int next_var_reg = 4;
    for (const auto& [name, e] : program.lets) {
        if (next_var_reg > 7) throw MiniLangError("too many variables for the register pool");
        cg.emit_expr(*e, 0);
        cg.out << "mov r" << next_var_reg << ", r0\n";
        cg.var_reg[name] = next_var_reg++;
    }
    cg.emit_expr(*program.ret, 0);
    cg.out << "ret r0";
    return cg.out.str();
}

std::string compile(const std::string& source) { return compile(parse(source)); }

} // namespace mini

namespace {

std::unique_ptr<mini::Expr> gen_expr(Rng& rng, int depth, const std::vector<std::string>& vars) {
    bool leaf = depth == 0 || rng.next_below(4) == 0;
    if (leaf) {
        if (!vars.empty() && rng.next_below(2) == 0) {
            auto e = std::make_unique<mini::Expr>();
            e->kind = mini::Expr::Kind::Var;
            e->name = vars[size_t(rng.next_below(vars.size()))];
            return e;
        }
        auto e = std::make_unique<mini::Expr>();
        e->kind = mini::Expr::Kind::Const;
        e->value = int64_t(rng.next_below(10));
        return e;
    }
    auto e = std::make_unique<mini::Expr>();
    e->kind = mini::Expr::Kind::BinOp;
    const char ops[3] = {'+', '-', '*'};
    e->op = ops[rng.next_below(3)];
    e->lhs = gen_expr(rng, depth - 1, vars);
    e->rhs = gen_expr(rng, depth - 1, vars);
    return e;
}

} // namespace

std::vector<MiniProgram> gen_mini_corpus(size_t n, uint64_t rng_seed) {
    if (n < 1) throw MiniLangError("gen_mini_corpus requires n >= 1");
    Rng rng(rng_seed);
    const char* names[3] = {"a", "b", "c"};

    std::vector<MiniProgram> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        size_t n_vars = rng.next_below(3); // 0..2
        mini::Program p;
        std::vector<std::string> declared;
        for (size_t v = 0; v < n_vars; ++v) {
            p.lets.emplace_back(names[v], gen_expr(rng, int(1 + rng.next_below(2)), declared));
            declared.push_back(names[v]);
        }
        p.ret = gen_expr(rng, int(1 + rng.next_below(2)), declared);

        std::ostringstream src;
        src << "int main(){";
        for (const auto& [name, e] : p.lets)
            src << "int " << name << "=" << mini::to_source(*e) << ";";
        src << "return " << mini::to_source(*p.ret) << ";}";

        MiniProgram mp;
        mp.source = src.str();
        mp.asm_text = mini::compile(p);
        mp.expected_exit_code = mini::interpret(p);
        out.push_back(std::move(mp));
    }
    return out;
}

} // namespace retrans
