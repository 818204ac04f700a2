// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/manifest.hpp"

#include <ctime>
#include <fstream>
#include <stdexcept>

#include "retrans/sha256.hpp"

namespace retrans {

using nlohmann::json;

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot digest missing file: " + path);
    Sha256 h;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h.update(buf, size_t(in.gcount()));
    return h.hex_digest();
}

void RunManifest::add_input(const std::string& path) {
    input_digests[path] = sha256_file(path);
}

void RunManifest::write(const std::string& output_path) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["resolved_config"] = resolved_config;
    j["input_digests"] = input_digests;
    j["tool_version"] = tool_version;
    j["seed"] = seed;
    if (created_at.empty()) {
        char buf[32];
        std::time_t now = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        j["created_at"] = buf;
    } else {
        j["created_at"] = created_at;
    }

    std::string path = output_path + ".manifest.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

} // namespace retrans
