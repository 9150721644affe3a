// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace moce {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// SplitMix64 finalizer; a good bijective mixer for seeds and hash keys.
std::uint64_t mix64(std::uint64_t x);

/// Seed of the named substream of a master seed. Every random consumer in a
/// run (embedder, clustering, init, data order) draws from its own substream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

/// Deterministic generator. Distributions are implemented here rather than
/// with <random> distributions, whose outputs differ between standard
/// libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    /// Standard normal (Box-Muller, one draw per call).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
};

} // namespace moce
