// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace retrans {

// Shared assembly vocabulary tables. The normalizer consumes the register
// list; the tokenizer consumes the mnemonic list. Both lists are ordered and
// deterministic so that vocabularies built from them are reproducible.

// Mnemonics of the toy dialect (see docs/toy_assembly.md).
const std::vector<std::string>& toy_mnemonics();

// Common x86/x86-64 mnemonics as they appear in disassembler output. The
// tokenizer accepts a caller-supplied list as well; this is the default.
const std::vector<std::string>& default_x86_mnemonics();

// Union of toy + x86 mnemonics, deduplicated, order-stable.
std::vector<std::string> default_mnemonics();

// Register names recognized by register renaming: x86 families (rax/eax/ax/
// al...), r8-r15 with suffixes, and toy registers r0-r7.
const std::vector<std::string>& known_registers();

bool is_known_register(const std::string& lower_token);

} // namespace retrans
