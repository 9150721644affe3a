// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "moce/kv.hpp"
#include "moce/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace moce {

enum class EmbeddingSource { kToy, kFile };

struct RunConfig {
    std::string train_path;
    std::string eval_path;
    std::string out_dir;

    EmbeddingSource embedding_source = EmbeddingSource::kToy;
    std::string embedding_path;
    std::size_t embed_dim = 64;
    /// Embed the response as well as the instruction.
    bool embed_response = false;

    /// Exactly one of these is non-zero.
    std::size_t k_max = 0;
    std::size_t groups = 0;

    // model
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_ff = 64;
    std::size_t max_seq_len = 512;
    std::size_t adapter_rank = 64;
    std::size_t experts = 4;
    std::size_t top_k = 2;
    RoutingMode mode = RoutingMode::kTopK;
    bool variant = false;
    Activation activation = Activation::kGelu;
    bool renormalize = false;
    double moe_scale = 1.0;
    bool train_attention = false;
    double router_init_std = 0.02;

    // optimisation
    double lr = 2e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    /// Overrides epochs when non-zero.
    std::size_t steps = 0;
    double lambda = 0.01;
    double clip_norm = 1.0;
    std::size_t pretrain_steps = 0;
    double pretrain_lr = 1e-2;
    std::uint64_t seed = 0;

    // ablation switches
    bool no_clustering = false;
    bool no_token_routing = false;

    /// Throws ConfigError when fields contradict each other.
    void validate() const;
    KeyValues to_map() const;
    static RunConfig from_map(const KeyValues& kv);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;

    /// Expert count after the token-routing switch.
    std::size_t effective_experts() const { return no_token_routing ? 1 : experts; }
    std::size_t effective_top_k() const { return no_token_routing ? 1 : top_k; }
    /// Model configuration for `vocab` tokens and `m` groups.
    ModelConfig model_config(std::size_t vocab, std::size_t m) const;
};

} // namespace moce
