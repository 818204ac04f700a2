// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/format.hpp"

namespace retrans {

std::vector<TokenId> format_prompt(const Vocab& vocab, const std::string& input_text,
                                   Task task, Strategy strategy, size_t n_prefix) {
    std::vector<TokenId> ids;
    ids.push_back(Vocab::BOS);
    if (strategy == Strategy::Seq2SeqUnified)
        for (size_t i = 0; i < n_prefix; ++i) ids.push_back(Vocab::prefix_id_for(task));
    TokenStream in = encode(vocab, input_text, input_role(task));
    ids.insert(ids.end(), in.ids.begin(), in.ids.end());
    ids.push_back(Vocab::SEP);
    return ids;
}

PairEncoding format_pair(const Vocab& vocab, const Sample& sample, Strategy strategy,
                         size_t n_prefix) {
    PairEncoding enc;
    enc.ids = format_prompt(vocab, sample.input_text, sample.task, strategy, n_prefix);
    enc.prompt_len = enc.ids.size();
    TokenStream out = encode(vocab, sample.output_text, output_role(sample.task));
    enc.ids.insert(enc.ids.end(), out.ids.begin(), out.ids.end());
    enc.ids.push_back(Vocab::EOS);

    size_t n = enc.ids.size();
    enc.targets.assign(enc.ids.begin() + 1, enc.ids.end());
    enc.targets.push_back(Vocab::PAD); // final position has no next token
    enc.loss_mask.assign(n, 0);
    // Position prompt_len - 1 (the SEP) predicts the first output token;
    // position n - 2 predicts EOS; position n - 1 stays masked.
    for (size_t k = enc.prompt_len - 1; k + 1 < n; ++k) enc.loss_mask[k] = 1;
    return enc;
}

TokenStream format_pretrain_stream(const Vocab& vocab, const std::string& text, Role role) {
    TokenStream s = encode(vocab, text, role);
    s.ids.insert(s.ids.begin(), Vocab::BOS);
    s.ids.push_back(Vocab::EOS);
    return s;
}

} // namespace retrans
