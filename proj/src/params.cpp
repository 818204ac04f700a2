// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/params.hpp"

#include <cstring>
#include <fstream>

#include "retrans/sha256.hpp"

namespace retrans {

using nlohmann::json;

void ModelConfig::validate() const {
    if (vocab_size == 0) throw std::invalid_argument("vocab_size must be positive");
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0)
        throw std::invalid_argument("model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("d_model must be divisible by n_heads");
    if (max_context == 0) throw std::invalid_argument("max_context must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("dropout must be in [0, 1)");
}

json ModelConfig::to_json() const {
    return json{{"vocab_size", vocab_size}, {"d_model", d_model},
                {"n_layers", n_layers},     {"n_heads", n_heads},
                {"d_ff", d_ff},             {"max_context", max_context},
                {"dropout", dropout},       {"tie_embeddings", tie_embeddings}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<size_t>();
    c.d_model = j.at("d_model").get<size_t>();
    c.n_layers = j.at("n_layers").get<size_t>();
    c.n_heads = j.at("n_heads").get<size_t>();
    c.d_ff = j.at("d_ff").get<size_t>();
    c.max_context = j.at("max_context").get<size_t>();
    c.dropout = j.value("dropout", 0.0);
    c.tie_embeddings = j.value("tie_embeddings", false);
    c.validate();
    return c;
}

size_t ParamStore::add(const std::string& name, size_t rows, size_t cols) {
    if (find(name)) throw std::invalid_argument("duplicate tensor name: " + name);
    TensorSpec spec{name, rows, cols, data_.size()};
    specs_.push_back(spec);
    data_.resize(data_.size() + rows * cols, 0.0);
    return specs_.size() - 1;
}

std::optional<size_t> ParamStore::find(const std::string& name) const {
    for (size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].name == name) return i;
    return std::nullopt;
}

std::string ParamStore::checksum() const {
    Sha256 h;
    h.update(data_.data(), data_.size() * sizeof(double));
    return h.hex_digest();
}

namespace {
constexpr char kMagic[4] = {'R', 'T', 'N', 'S'};
constexpr uint32_t kFormatVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
} // namespace

void save_container(const std::string& path, const json& header, const ParamStore& store) {
    json h = header;
    json dir = json::array();
    for (const auto& s : store.specs())
        dir.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
    h["tensors"] = dir;
    h["format_version"] = kFormatVersion;
    std::string htext = h.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u32(out, kFormatVersion);
    write_u32(out, uint32_t(htext.size()));
    out.write(htext.data(), std::streamsize(htext.size()));
    out.write(reinterpret_cast<const char*>(store.data()),
              std::streamsize(store.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

LoadedContainer load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");
    uint32_t version = read_u32(in);
    if (version != kFormatVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    uint32_t hlen = read_u32(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    json header = json::parse(htext, nullptr, false);
    if (header.is_discarded())
        throw std::runtime_error(path + ": corrupt checkpoint header");

    size_t total = 0;
    for (const auto& t : header.at("tensors"))
        total += t.at("rows").get<size_t>() * t.at("cols").get<size_t>();
    std::vector<double> data(total);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(total * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated checkpoint data");
    return {std::move(header), std::move(data)};
}

void restore_store(ParamStore& store, const json& header, const std::vector<double>& data) {
    const auto& dir = header.at("tensors");
    if (dir.size() != store.specs().size())
        throw std::runtime_error("checkpoint tensor count mismatch: file has " +
                                 std::to_string(dir.size()) + ", expected " +
                                 std::to_string(store.specs().size()));
    for (size_t i = 0; i < store.specs().size(); ++i) {
        const auto& want = store.specs()[i];
        const auto& have = dir[i];
        if (have.at("name").get<std::string>() != want.name ||
            have.at("rows").get<size_t>() != want.rows ||
            have.at("cols").get<size_t>() != want.cols)
            throw std::runtime_error("checkpoint tensor mismatch at \"" + want.name + "\"");
    }
    if (data.size() != store.size())
        throw std::runtime_error("checkpoint data size mismatch");
    std::copy(data.begin(), data.end(), store.data());
}

} // namespace retrans
