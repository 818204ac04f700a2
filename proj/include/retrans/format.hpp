// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "retrans/adaptation.hpp"
#include "retrans/corpus.hpp"
#include "retrans/tokenizer.hpp"

namespace retrans {

// Supervised pair layout:
//   MA:  [BOS]            input [SEP] output [EOS]
//   S2S: [BOS] [P_t x n]  input [SEP] output [EOS]
// where P_t is the task's prefix carrier token. targets/loss_mask run the
// full sequence length so they align with the logits rows: targets[k] is
// ids[k+1], the final position is always masked, and loss_mask additionally
// marks only output-segment targets (first output token through EOS).
struct PairEncoding {
    std::vector<TokenId> ids;
    std::vector<TokenId> targets;     // length ids.size(); last entry is PAD
    std::vector<uint8_t> loss_mask;   // length ids.size(); last entry is 0
    size_t prompt_len = 0;            // tokens up to and including SEP
};

PairEncoding format_pair(const Vocab& vocab, const Sample& sample, Strategy strategy,
                         size_t n_prefix = 1);

// Prompt part only: [BOS] [P_t x n]? input [SEP].
std::vector<TokenId> format_prompt(const Vocab& vocab, const std::string& input_text,
                                   Task task, Strategy strategy, size_t n_prefix = 1);

// Pretraining stream for one text: [BOS] text [EOS], encoded under `role`.
TokenStream format_pretrain_stream(const Vocab& vocab, const std::string& text, Role role);

} // namespace retrans
