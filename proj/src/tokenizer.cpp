// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "retrans/asmdict.hpp"

namespace retrans {

using nlohmann::json;

Vocab Vocab::build(std::vector<std::string> mnemonics, size_t max_context,
                   std::string mnemonic_source) {
    Vocab v;
    v.max_context_ = max_context;
    v.mnemonic_source_ = std::move(mnemonic_source);
    for (auto& m : mnemonics) {
        if (m.empty()) continue;
        if (v.opcode_ids_.count(m)) continue;
        v.opcode_ids_[m] = TokenId(NUM_SPECIALS + 256 + v.opcodes_.size());
        v.opcodes_.push_back(std::move(m));
    }
    return v;
}

Vocab Vocab::build_default(size_t max_context) {
    return build(default_mnemonics(), max_context, "builtin");
}

TokenId Vocab::opcode_id(const std::string& mnemonic) const {
    auto it = opcode_ids_.find(mnemonic);
    return it == opcode_ids_.end() ? TokenId(-1) : it->second;
}

std::string Vocab::token_text(TokenId id) const {
    if (id < 0 || size_t(id) >= size())
        throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocab of size " +
                                std::to_string(size()));
    if (id < NUM_SPECIALS) return "";
    if (id < BYTE_BASE + 256) return std::string(1, char(uint8_t(id - BYTE_BASE)));
    return opcodes_[size_t(id - BYTE_BASE - 256)];
}

std::string Vocab::to_json() const {
    json j;
    j["version"] = 1;
    j["special_tokens"] = {"<pad>", "<bos>", "<eos>", "<sep>", "<asm2src>", "<src2asm>"};
    j["byte_tokens"] = 256;
    j["opcode_tokens"] = opcodes_;
    j["max_context"] = max_context_;
    j["mnemonic_source"] = mnemonic_source_;
    return j.dump(2) + "\n";
}

Vocab Vocab::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::runtime_error("malformed vocab JSON");
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::runtime_error("unsupported vocab version");
    if (j.value("byte_tokens", 0) != 256)
        throw std::runtime_error("vocab must declare 256 byte tokens");
    std::vector<std::string> mnemonics = j.at("opcode_tokens").get<std::vector<std::string>>();
    return build(std::move(mnemonics), j.at("max_context").get<size_t>(),
                 j.value("mnemonic_source", "custom"));
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocab file: " + path);
    out << to_json();
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

TokenStream encode(const Vocab& vocab, const std::string& text, Role role) {
    TokenStream out;
    out.source_role = role;
    out.ids.reserve(text.size());

    size_t i = 0;
    bool at_line_start = true;
    while (i < text.size()) {
        if (role == Role::Assembly && at_line_start &&
            std::isalpha(static_cast<unsigned char>(text[i]))) {
            size_t j = i;
            while (j < text.size() &&
                   std::isalnum(static_cast<unsigned char>(text[j])))
                ++j;
            TokenId opc = vocab.opcode_id(text.substr(i, j - i));
            if (opc >= 0) {
                out.ids.push_back(opc);
                i = j;
                at_line_start = false;
                continue;
            }
        }
        char c = text[i];
        out.ids.push_back(Vocab::byte_id(uint8_t(c)));
        at_line_start = (c == '\n');
        ++i;
    }
    return out;
}

std::string decode(const Vocab& vocab, const TokenStream& stream) {
    std::string out;
    out.reserve(stream.ids.size());
    for (TokenId id : stream.ids) out += vocab.token_text(id);
    return out;
}

size_t pair_token_count(const Vocab& vocab, const Sample& s, size_t n_prefix) {
    size_t in = encode(vocab, s.input_text, input_role(s.task)).size();
    size_t out = encode(vocab, s.output_text, output_role(s.task)).size();
    return in + out + 3 + n_prefix; // BOS + SEP + EOS + prefix slots
}

std::pair<std::vector<Sample>, std::vector<Sample>>
filter_by_length(const Vocab& vocab, const std::vector<Sample>& samples,
                 size_t max_context, size_t n_prefix) {
    if (max_context < 1) throw std::invalid_argument("max_context must be >= 1");
    std::vector<Sample> kept, excluded;
    for (const auto& s : samples) {
        if (pair_token_count(vocab, s, n_prefix) <= max_context)
            kept.push_back(s);
        else
            excluded.push_back(s);
    }
    return {std::move(kept), std::move(excluded)};
}

} // namespace retrans
