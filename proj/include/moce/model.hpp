// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm decoder-only transformer in two flavours: the dense base
// and its mixture-of-clustered-experts counterpart, whose feed-forward
// sub-layers are MoceLayers over the base's frozen networks.

#pragma once

#include "moce/moce_layer.hpp"
#include "moce/routing.hpp"
#include "moce/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace moce {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_ff = 64;
    std::size_t max_seq_len = 32;
    std::size_t adapter_rank = 8;
    std::size_t groups = 1;  // M
    std::size_t experts = 4; // N
    std::size_t top_k = 2;
    RoutingMode mode = RoutingMode::kTopK;
    bool variant = false;
    Activation activation = Activation::kGelu;
    bool renormalize = false;
    double moe_scale = 1.0;
    bool train_attention = false;
    double router_init_std = 0.02;
    std::uint64_t seed = 0;

    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;
    std::map<std::string, std::string> to_map() const;
    /// Inverse of to_map; unknown keys are a ConfigError.
    static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct AttentionBlock {
    Tensor norm; // d_model
    Tensor wq, wk, wv, wo; // d_model x d_model
};

struct DenseBlock {
    AttentionBlock attention;
    Tensor ffn_norm; // d_model
    FeedForward ffn;
};

class DenseModel {
public:
    static DenseModel init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    NamedTensors named_parameters() const;

    Tensor token_embedding, position_embedding;
    std::vector<DenseBlock> blocks;
    Tensor final_norm;
    Tensor lm_head; // d_model x vocab

private:
    ModelConfig config_;
};

class MoceModel {
public:
    /// Shapes only: every tensor zero-filled, ready to receive a checkpoint.
    static MoceModel skeleton(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    std::size_t num_groups() const { return config_.groups; }
    /// Every tensor, backbone included.
    NamedTensors named_parameters() const;
    /// Tensors the optimizer updates (requires_grad set).
    NamedTensors trainable_parameters() const;

    Tensor token_embedding, position_embedding;
    std::vector<AttentionBlock> attention;
    std::vector<Tensor> ffn_norms;
    std::vector<MoceLayer> layers;
    Tensor final_norm;
    Tensor lm_head;

private:
    ModelConfig config_;
};

/// Copies and freezes the dense backbone and attaches identity-initialised
/// adapters and small random routers, so the result computes exactly the
/// dense function. Parameters derive from config.seed.
MoceModel upcycle_init(const DenseModel& dense, const ModelConfig& config);

/// Logits [T x vocab] of the dense base.
Tensor dense_forward(Tape& tape, const DenseModel& model, std::span<const std::size_t> ids);

/// Logits [T x vocab] with every MoCE layer bound to `group`. Routing of all
/// layers is appended to `record` as one sequence.
Tensor model_forward(Tape& tape, const MoceModel& model, std::span<const std::size_t> ids,
                     std::size_t group, RoutingRecord& record);

/// Mean next-token negative log-likelihood over supervised positions.
Tensor lm_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets,
               const std::vector<bool>& supervised);

/// Greedy continuation of `prompt` until `stop` or `max_new` tokens, with the
/// group held fixed. Returns only the generated tokens (stop excluded).
std::vector<std::size_t> greedy_decode(const MoceModel& model, std::vector<std::size_t> prompt,
                                       std::size_t group, std::size_t stop, std::size_t max_new);

} // namespace moce
