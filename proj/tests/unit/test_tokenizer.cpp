// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "retrans/rng.hpp"
#include "retrans/tokenizer.hpp"

#include "../support.hpp"

using namespace retrans;

namespace {
Vocab test_vocab() { return Vocab::build_default(1024); }
} // namespace

TEST_CASE("vocab IDs are contiguous with specials lowest") {
    Vocab v = test_vocab();
    CHECK(Vocab::PAD == 0);
    CHECK(Vocab::PREFIX_SRC2ASM == 5);
    CHECK(v.size() == size_t(Vocab::NUM_SPECIALS) + 256 + v.opcode_tokens().size());
    for (size_t id = 0; id < v.size(); ++id)
        CHECK_NOTHROW(v.token_text(TokenId(id)));
    CHECK_THROWS_AS(v.token_text(TokenId(v.size())), std::out_of_range);
    // Toy dialect mnemonics all have opcode tokens.
    for (const char* m : {"mov", "add", "sub", "mul", "jmp", "jz", "cmp", "ret"})
        CHECK(v.opcode_id(m) >= 0);
}

TEST_CASE("a bare known mnemonic encodes to a single opcode token") {
    Vocab v = test_vocab();
    TokenStream ts = encode(v, "ret", Role::Assembly);
    REQUIRE(ts.size() == 1);
    CHECK(ts.ids[0] == v.opcode_id("ret"));
    CHECK(ts.ids[0] >= Vocab::BYTE_BASE + 256); // not a byte token
}

TEST_CASE("empty text encodes to an empty stream") {
    Vocab v = test_vocab();
    CHECK(encode(v, "", Role::Assembly).size() == 0);
    CHECK(encode(v, "", Role::Source).size() == 0);
}

TEST_CASE("assembly lines split into opcode head plus byte tail") {
    Vocab v = test_vocab();
    std::string text = "mov eax, 0x7ffe";
    TokenStream ts = encode(v, text, Role::Assembly);
    REQUIRE(ts.size() == 1 + std::string(" eax, 0x7ffe").size());
    CHECK(ts.ids[0] == v.opcode_id("mov"));
    for (size_t i = 1; i < ts.size(); ++i) {
        CHECK(ts.ids[i] >= Vocab::BYTE_BASE);
        CHECK(ts.ids[i] < Vocab::BYTE_BASE + 256);
    }
    // Source role never uses opcode tokens.
    TokenStream src = encode(v, text, Role::Source);
    CHECK(src.size() == text.size());
}

TEST_CASE("unknown line heads fall back to bytes without loss") {
    Vocab v = test_vocab();
    // "movx" must not match the "mov" opcode by prefix.
    TokenStream ts = encode(v, "movx eax", Role::Assembly);
    CHECK(ts.size() == std::string("movx eax").size());
    CHECK(decode(v, ts) == "movx eax");
}

TEST_CASE("decode round-trips any string in either role") {
    Vocab v = test_vocab();
    CHECK(decode(v, encode(v, "mov eax, 1", Role::Assembly)) == "mov eax, 1");
    CHECK(decode(v, encode(v, "abc", Role::Source)) == "abc");

    Rng rng(2024);
    const char* frags[] = {"mov", "ret", "xyz", " ", ",", "\n", "0x1f", "eax",
                           "\t", "{", "}", "int main()", ";", "\xc3\xa9"};
    for (int iter = 0; iter < 300; ++iter) {
        std::string s;
        size_t n = rng.next_below(12);
        for (size_t i = 0; i < n; ++i) {
            if (rng.next_below(8) == 0)
                s.push_back(char(rng.next_below(256)));
            else
                s += frags[rng.next_below(14)];
        }
        Role role = rng.next_below(2) ? Role::Assembly : Role::Source;
        CHECK(decode(v, encode(v, s, role)) == s);
    }
}

TEST_CASE("specials decode to empty text") {
    Vocab v = test_vocab();
    TokenStream ts;
    ts.ids = {Vocab::BOS, Vocab::byte_id('a'), Vocab::SEP, Vocab::byte_id('b'), Vocab::EOS};
    CHECK(decode(v, ts) == "ab");
}

TEST_CASE("decode rejects out-of-range IDs") {
    Vocab v = test_vocab();
    TokenStream ts;
    ts.ids = {TokenId(v.size())};
    CHECK_THROWS_AS(decode(v, ts), std::out_of_range);
}

TEST_CASE("opcode tokens compress all-mnemonic assembly") {
    Vocab v = test_vocab();
    std::string text = "mov r0, 7\nadd r0, r1\nret r0";
    TokenStream ts = encode(v, text, Role::Assembly);
    CHECK(ts.size() < text.size());
}

TEST_CASE("length filter keeps exactly the samples that fit") {
    Vocab v = test_vocab();
    // Token count = input bytes + output bytes + 4 specials.
    auto mk = [](size_t in_len, size_t out_len, const std::string& id) {
        return Sample{std::string(in_len, 'a'), std::string(out_len, 'b'),
                      Task::SrcToAsm, id};
    };
    std::vector<Sample> samples = {
        mk(508, 508, "exactly-1020"),
        mk(510, 511, "exactly-1025"),
        mk(510, 510, "exactly-1024"),
    };
    CHECK(pair_token_count(v, samples[0]) == 1020);
    CHECK(pair_token_count(v, samples[1]) == 1025);

    auto [kept, excluded] = filter_by_length(v, samples, 1024);
    REQUIRE(kept.size() == 2);
    REQUIRE(excluded.size() == 1);
    CHECK(kept[0].id == "exactly-1020");
    CHECK(kept[1].id == "exactly-1024");
    CHECK(excluded[0].id == "exactly-1025");

    auto [k2, e2] = filter_by_length(v, {}, 1024);
    CHECK(k2.empty());
    CHECK(e2.empty());
    CHECK_THROWS(filter_by_length(v, samples, 0));
}

TEST_CASE("kept and excluded partition the input") {
    Vocab v = test_vocab();
    Rng rng(5);
    std::vector<Sample> samples;
    for (int i = 0; i < 40; ++i)
        samples.push_back({std::string(1 + rng.next_below(40), 'x'),
                           std::string(1 + rng.next_below(40), 'y'),
                           rng.next_below(2) ? Task::AsmToSrc : Task::SrcToAsm,
                           "s" + std::to_string(i)});
    auto [kept, excluded] = filter_by_length(v, samples, 48);
    CHECK(kept.size() + excluded.size() == samples.size());
    for (const auto& s : kept) CHECK(pair_token_count(v, s) <= 48);
    for (const auto& s : excluded) CHECK(pair_token_count(v, s) > 48);

    // Order within each part matches input order; union is the input multiset.
    std::vector<std::string> merged;
    size_t ki = 0, ei = 0;
    for (const auto& s : samples) {
        if (ki < kept.size() && kept[ki].id == s.id) merged.push_back(kept[ki++].id);
        else merged.push_back(excluded[ei++].id);
    }
    for (size_t i = 0; i < samples.size(); ++i) CHECK(merged[i] == samples[i].id);
}

TEST_CASE("vocab JSON round-trips") {
    test_support::TempDir dir;
    Vocab v = Vocab::build_default(512);
    std::string path = dir.file("vocab.json");
    v.save(path);
    Vocab loaded = Vocab::load(path);
    CHECK(loaded == v);
    CHECK(loaded.max_context() == 512);
    CHECK(loaded.mnemonic_source() == "builtin");
    CHECK_THROWS(Vocab::from_json("{\"version\": 9}"));
}
