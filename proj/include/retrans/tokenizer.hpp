// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retrans/corpus.hpp"
#include "retrans/task.hpp"

namespace retrans {

using TokenId = int32_t;

// Which side of a pair a text is; controls opcode matching in encode().
enum class Role { Assembly, Source };

// Hybrid byte-level + instruction-aware vocabulary.
//
// ID layout, contiguous from 0: six specials, then the 256 byte tokens, then
// one opcode token per mnemonic in list order.
class Vocab {
public:
    static constexpr TokenId PAD = 0;
    static constexpr TokenId BOS = 1;
    static constexpr TokenId EOS = 2;
    static constexpr TokenId SEP = 3;
    static constexpr TokenId PREFIX_ASM2SRC = 4;
    static constexpr TokenId PREFIX_SRC2ASM = 5;
    static constexpr TokenId NUM_SPECIALS = 6;
    static constexpr TokenId BYTE_BASE = NUM_SPECIALS;

    // Builds from a mnemonic list (deduplicated, order preserved). The
    // default list covers the toy dialect plus common x86 mnemonics.
    static Vocab build(std::vector<std::string> mnemonics, size_t max_context = 1024,
                       std::string mnemonic_source = "custom");
    static Vocab build_default(size_t max_context = 1024);

    size_t size() const { return size_t(NUM_SPECIALS) + 256 + opcodes_.size(); }
    size_t max_context() const { return max_context_; }
    const std::vector<std::string>& opcode_tokens() const { return opcodes_; }
    const std::string& mnemonic_source() const { return mnemonic_source_; }

    static TokenId byte_id(uint8_t b) { return BYTE_BASE + TokenId(b); }
    // -1 when the mnemonic has no opcode token.
    TokenId opcode_id(const std::string& mnemonic) const;
    static TokenId prefix_id_for(Task t) {
        return t == Task::AsmToSrc ? PREFIX_ASM2SRC : PREFIX_SRC2ASM;
    }

    // Text a single ID decodes to; specials decode to "".
    std::string token_text(TokenId id) const;

    bool operator==(const Vocab& other) const {
        return opcodes_ == other.opcodes_ && max_context_ == other.max_context_;
    }

    // JSON serialization: ordered token list plus metadata.
    std::string to_json() const;
    static Vocab from_json(const std::string& text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> opcodes_;
    std::unordered_map<std::string, TokenId> opcode_ids_;
    size_t max_context_ = 1024;
    std::string mnemonic_source_;
};

struct TokenStream {
    std::vector<TokenId> ids;
    Role source_role = Role::Source;

    size_t size() const { return ids.size(); }
};

// Deterministic, lossless encoding. For Role::Assembly, an identifier at the
// start of a line that exactly matches an opcode token becomes one opcode
// token; everything else (and all Role::Source text) becomes byte tokens.
TokenStream encode(const Vocab& vocab, const std::string& text, Role role);

// Inverse of encode for any input: decode(encode(s, role)) == s. Specials
// render as empty. Throws std::out_of_range on an invalid ID.
std::string decode(const Vocab& vocab, const TokenStream& stream);

// Token count for a sample pair = tokens(input) + tokens(output) + specials,
// where specials = BOS + SEP + EOS + n_prefix prefix slots.
size_t pair_token_count(const Vocab& vocab, const Sample& s, size_t n_prefix = 1);

// Keeps a sample iff its pair token count fits max_context. No truncation;
// kept and excluded together preserve the input order and multiset.
std::pair<std::vector<Sample>, std::vector<Sample>>
filter_by_length(const Vocab& vocab, const std::vector<Sample>& samples,
                 size_t max_context, size_t n_prefix = 1);

inline Role input_role(Task t) { return t == Task::AsmToSrc ? Role::Assembly : Role::Source; }
inline Role output_role(Task t) { return t == Task::AsmToSrc ? Role::Source : Role::Assembly; }

} // namespace retrans
