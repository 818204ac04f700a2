// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace retrans {

constexpr const char* kToolVersion = "0.1.0";

// Provenance record written next to every artifact-producing command's
// output as <output>.manifest.json. Timestamps are informational; primary
// outputs stay byte-identical across reruns with the same inputs and seed.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::json resolved_config;
    std::map<std::string, std::string> input_digests; // path -> sha256 hex
    std::string tool_version = kToolVersion;
    uint64_t seed = 0;
    std::string created_at; // ISO 8601 UTC

    void add_input(const std::string& path); // digests the file, throws if unreadable
    void write(const std::string& output_path) const; // writes alongside the output
};

std::string sha256_file(const std::string& path);

} // namespace retrans
