// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace retrans {

// Decoder architecture description. d_model must be divisible by n_heads and
// max_context must match the tokenizer's limit.
struct ModelConfig {
    size_t vocab_size = 0;
    size_t d_model = 128;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t d_ff = 512;
    size_t max_context = 1024;
    double dropout = 0.0; // 0 keeps every determinism invariant; >0 is opt-in
    bool tie_embeddings = false;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
    std::string name;
    size_t rows = 0;
    size_t cols = 0;
    size_t offset = 0;

    size_t numel() const { return rows * cols; }
};

// Named tensors backed by one flat arena. Gradient buffers and optimizer
// moments reuse the same offsets, which keeps the update and the
// finite-difference harness trivial.
class ParamStore {
public:
    size_t add(const std::string& name, size_t rows, size_t cols);

    const std::vector<TensorSpec>& specs() const { return specs_; }
    const TensorSpec& spec(size_t idx) const { return specs_.at(idx); }
    std::optional<size_t> find(const std::string& name) const;

    size_t size() const { return data_.size(); }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* tensor(size_t idx) { return data_.data() + specs_.at(idx).offset; }
    const double* tensor(size_t idx) const { return data_.data() + specs_.at(idx).offset; }

    // SHA-256 over the raw tensor bytes; used by frozen-parameter tests.
    std::string checksum() const;

private:
    std::vector<TensorSpec> specs_;
    std::vector<double> data_;
};

// Versioned binary tensor container: "RTNS" magic, format version, a JSON
// header (kind, configs, tensor directory), then raw little-endian float64
// data in directory order. Readers reject unknown versions and any
// name/shape mismatch against the expected store layout.
void save_container(const std::string& path, const nlohmann::json& header,
                    const ParamStore& store);

struct LoadedContainer {
    nlohmann::json header;
    std::vector<double> data;
};
LoadedContainer load_container(const std::string& path);

// Copies loaded data into `store`, validating the directory in `header`
// matches the store layout exactly. Throws std::runtime_error on mismatch.
void restore_store(ParamStore& store, const nlohmann::json& header,
                   const std::vector<double>& data);

} // namespace retrans
