// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// The mixture-of-clustered-experts layer.
//
// A layer holds M expert groups, each with N adapter experts and its own
// router, plus an optional general group that every sequence uses. A whole
// sequence is bound to one group (chosen upstream from its sequence
// embedding); inside that group each token is routed to its top-k experts,
// or softly merged over all N. Only the active group's parameters take part
// in the computation.
//
// Experts are adapters over one shared frozen feed-forward network E:
//     A_i(x) = act(E(x) W_down_i) W_up_i + x
// and the group output is y = sum_i TopK(R(x)_i, k) A_i(x).

#pragma once

#include "moce/random.hpp"
#include "moce/routing.hpp"
#include "moce/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace moce {

/// Dense position-wise feed-forward network: act(x W_in) W_out.
struct FeedForward {
    Tensor w_in;  // d_model x d_ff
    Tensor w_out; // d_ff x d_model
    Activation activation = Activation::kGelu;
};

Tensor feed_forward(Tape& tape, const FeedForward& ffn, const Tensor& x);

struct AdapterExpert {
    Tensor down; // d_model x r
    Tensor up;   // r x d_model

    std::size_t rank() const { return down.cols(); }
    /// W_down ~ N(0, down_std^2), W_up = 0: the adapter starts as the identity.
    static AdapterExpert identity_init(std::size_t d_model, std::size_t rank, double down_std,
                                       Rng& rng);
};

/// act(base_out W_down) W_up, the adapter's learned correction.
Tensor adapter_delta(Tape& tape, const AdapterExpert& adapter, const Tensor& base_out,
                     Activation act);
/// act(base_out W_down) W_up + x.
Tensor adapter_forward(Tape& tape, const AdapterExpert& adapter, const Tensor& base_out,
                       const Tensor& x, Activation act);

struct ExpertGroup {
    std::vector<AdapterExpert> experts;
    Tensor router; // d_model x N

    std::size_t size() const { return experts.size(); }
};

/// h(x) = W_G^T x for a single token ([d] -> [N]) or a token matrix
/// ([T x d] -> [T x N]).
Tensor router_logits(Tape& tape, const Tensor& router, const Tensor& x);
/// Softmax over experts.
Tensor gate(Tape& tape, const Tensor& logits);

enum class RoutingMode { kTopK, kSoft };

/// How expert outputs are combined into the layer output.
///  kAdapterSum:    y = scale * sum_i w_i A_i(x)
///  kDenseResidual: y = E(x) + scale * sum_i w_i (A_i(x) - x)
/// The second keeps the frozen network's output intact whatever the gate
/// mass of the selected experts, so a freshly upcycled model reproduces its
/// dense base exactly. The general path of the variant contributes only its
/// scaled correction under kDenseResidual.
enum class CombineForm { kAdapterSum, kDenseResidual };

RoutingMode parse_routing_mode(const std::string& name);
std::string to_string(RoutingMode mode);

struct MoceLayerOptions {
    std::size_t top_k = 2;
    RoutingMode mode = RoutingMode::kTopK;
    /// Rescale the selected top-k weights to sum to one.
    bool renormalize = false;
    /// Multiplier on the combined adapter output.
    double scale = 1.0;
    Activation activation = Activation::kGelu;
    CombineForm combine = CombineForm::kAdapterSum;
};

class MoceLayer {
public:
    MoceLayer(FeedForward base, std::vector<ExpertGroup> groups, std::optional<ExpertGroup> general,
              MoceLayerOptions options);

    std::size_t num_groups() const { return groups_.size(); }
    std::size_t experts_per_group() const { return groups_.front().size(); }
    std::size_t d_model() const { return base_.w_in.rows(); }
    bool has_general() const { return general_.has_value(); }
    const MoceLayerOptions& options() const { return options_; }
    MoceLayerOptions& options() { return options_; }

    const FeedForward& base() const { return base_; }
    FeedForward& base() { return base_; }
    const ExpertGroup& group(std::size_t g) const { return groups_.at(g); }
    ExpertGroup& group(std::size_t g) { return groups_.at(g); }
    const ExpertGroup& general() const;
    ExpertGroup& general();

    /// Layer output for all tokens of one sequence bound to `group`: the
    /// group path under the configured mode, plus the general path when the
    /// layer has one.
    Tensor forward(Tape& tape, const Tensor& x, std::size_t group, RoutingRecord& record,
                   std::size_t layer_index = 0) const;

    /// The active group's contribution under an explicit routing mode.
    Tensor group_path(Tape& tape, const Tensor& x, std::size_t group, RoutingMode mode,
                      RoutingRecord& record, std::size_t layer_index = 0) const;
    /// The general experts' contribution (configured mode).
    Tensor general_path(Tape& tape, const Tensor& x, RoutingRecord& record,
                        std::size_t layer_index = 0) const;

    /// Active experts per token implied by the configuration.
    std::size_t active_experts_per_token() const;

    /// Every trainable tensor under a stable name prefix.
    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    // sum_i w_i * term_i, term_i = A_i(x) or its correction, per combine form.
    Tensor route(Tape& tape, const ExpertGroup& group, std::size_t router_id, const Tensor& x,
                 const Tensor& base, RoutingMode mode, RoutingRecord& record,
                 std::size_t layer_index) const;
    Tensor group_output(Tape& tape, const Tensor& x, const Tensor& base, std::size_t group,
                        RoutingMode mode, RoutingRecord& record, std::size_t layer_index) const;
    Tensor general_output(Tape& tape, const Tensor& x, const Tensor& base, RoutingRecord& record,
                          std::size_t layer_index) const;
    void check_input(const Tensor& x) const;

    FeedForward base_;
    std::vector<ExpertGroup> groups_;
    std::optional<ExpertGroup> general_;
    MoceLayerOptions options_;
};

/// Top-k group path (y = sum_i TopK(R^a(x)_i, k) A_i(x)).
Tensor moce_layer_forward(Tape& tape, const MoceLayer& layer, const Tensor& x, std::size_t group,
                          RoutingRecord& record);
/// Soft merge over all experts of the group.
Tensor soft_merge_forward(Tape& tape, const MoceLayer& layer, const Tensor& x, std::size_t group,
                          RoutingRecord& record);
/// Group path plus general path; the layer must have general experts.
Tensor moce_variant_forward(Tape& tape, const MoceLayer& layer, const Tensor& x,
                            std::size_t group, RoutingRecord& record);

} // namespace moce
