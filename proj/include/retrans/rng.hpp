// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace retrans {

// Deterministic 64-bit generator (splitmix64). <random> distributions are
// implementation-defined, so all sampling is done by hand to keep streams
// byte-identical across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound), rejection-sampled to avoid modulo bias.
    uint64_t next_below(uint64_t bound) {
        uint64_t threshold = -bound % bound;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1).
    double next_double01() {
        return double(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    // Standard normal via Box-Muller. No cached spare: one draw consumes two
    // uniforms, which keeps replay behaviour obvious.
    double next_gaussian() {
        double u1 = (double(next_u64() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
        double u2 = next_double01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

} // namespace retrans
