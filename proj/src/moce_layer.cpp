// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/moce_layer.hpp"

#include "moce/error.hpp"

#include <algorithm>

namespace moce {

Tensor feed_forward(Tape& tape, const FeedForward& ffn, const Tensor& x)
{
    return matmul(tape, activation(tape, matmul(tape, x, ffn.w_in), ffn.activation), ffn.w_out);
}

AdapterExpert AdapterExpert::identity_init(std::size_t d_model, std::size_t rank, double down_std,
                                           Rng& rng)
{
    AdapterExpert a{Tensor(Shape{d_model, rank}, true), Tensor(Shape{rank, d_model}, true)};
    for (double& v : a.down.values())
        v = rng.normal(0.0, down_std);
    return a;
}

Tensor adapter_delta(Tape& tape, const AdapterExpert& adapter, const Tensor& base_out,
                     Activation act)
{
    if (base_out.rank() != 2 || base_out.cols() != adapter.down.rows())
        throw ShapeError("adapter: input " + to_string(base_out.shape()) +
                         " does not match W_down " + to_string(adapter.down.shape()));
    const Tensor hidden = activation(tape, matmul(tape, base_out, adapter.down), act);
    return matmul(tape, hidden, adapter.up);
}

Tensor adapter_forward(Tape& tape, const AdapterExpert& adapter, const Tensor& base_out,
                       const Tensor& x, Activation act)
{
    if (x.shape() != base_out.shape())
        throw ShapeError("adapter: residual input " + to_string(x.shape()) +
                         " does not match base output " + to_string(base_out.shape()));
    return add(tape, adapter_delta(tape, adapter, base_out, act), x);
}

Tensor router_logits(Tape& tape, const Tensor& router, const Tensor& x)
{
    if (router.rank() != 2)
        throw ShapeError("router_logits: router must be a matrix, got " +
                         to_string(router.shape()));
    if (x.rank() == 1) {
        if (x.dim(0) != router.rows())
            throw ShapeError("router_logits: token " + to_string(x.shape()) + " for router " +
                             to_string(router.shape()));
        const Tensor row = matmul(tape, reshape(tape, x, Shape{1, x.dim(0)}), router);
        return reshape(tape, row, Shape{router.cols()});
    }
    if (x.rank() != 2 || x.cols() != router.rows())
        throw ShapeError("router_logits: tokens " + to_string(x.shape()) + " for router " +
                         to_string(router.shape()));
    return matmul(tape, x, router);
}

Tensor gate(Tape& tape, const Tensor& logits)
{
    return softmax(tape, logits, -1);
}

RoutingMode parse_routing_mode(const std::string& name)
{
    if (name == "topk")
        return RoutingMode::kTopK;
    if (name == "soft")
        return RoutingMode::kSoft;
    throw ConfigError("unknown routing mode '" + name + "'");
}

std::string to_string(RoutingMode mode)
{
    return mode == RoutingMode::kTopK ? "topk" : "soft";
}

MoceLayer::MoceLayer(FeedForward base, std::vector<ExpertGroup> groups,
                     std::optional<ExpertGroup> general, MoceLayerOptions options)
    : base_(std::move(base)), groups_(std::move(groups)), general_(std::move(general)),
      options_(options)
{
    if (groups_.empty())
        throw ConfigError("moce layer: at least one expert group is required");
    const std::size_t d = base_.w_in.rows();
    if (base_.w_out.rank() != 2 || base_.w_out.cols() != d || base_.w_out.rows() != base_.w_in.cols())
        throw ConfigError("moce layer: base feed-forward shapes " + to_string(base_.w_in.shape()) +
                          " / " + to_string(base_.w_out.shape()) + " are inconsistent");
    const std::size_t n = groups_.front().size();
    auto check_group = [&](const ExpertGroup& g, const std::string& what) {
        if (g.size() == 0)
            throw ConfigError("moce layer: " + what + " has no experts");
        if (g.router.rank() != 2 || g.router.rows() != d || g.router.cols() != g.size())
            throw ConfigError("moce layer: " + what + " router " + to_string(g.router.shape()) +
                              " does not match " + std::to_string(g.size()) + " experts of width " +
                              std::to_string(d));
        for (const auto& e : g.experts)
            if (e.down.rank() != 2 || e.down.rows() != d || e.up.rank() != 2 ||
                e.up.cols() != d || e.up.rows() != e.down.cols())
                throw ConfigError("moce layer: " + what + " adapter shapes " +
                                  to_string(e.down.shape()) + " / " + to_string(e.up.shape()) +
                                  " do not fit width " + std::to_string(d));
    };
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        check_group(groups_[g], "group " + std::to_string(g));
        if (groups_[g].size() != n)
            throw ConfigError("moce layer: all groups must hold the same number of experts");
    }
    if (general_)
        check_group(*general_, "general group");
    if (options_.top_k < 1 || options_.top_k > n)
        throw ConfigError("moce layer: top_k=" + std::to_string(options_.top_k) +
                          " outside [1, " + std::to_string(n) + "]");
    if (general_ && options_.top_k > general_->size())
        throw ConfigError("moce layer: top_k exceeds the general group size");
}

const ExpertGroup& MoceLayer::general() const
{
    if (!general_)
        throw ConfigError("moce layer: no general experts configured");
    return *general_;
}

ExpertGroup& MoceLayer::general()
{
    if (!general_)
        throw ConfigError("moce layer: no general experts configured");
    return *general_;
}

void MoceLayer::check_input(const Tensor& x) const
{
    if (!x.defined() || x.rank() != 2 || x.cols() != d_model() || x.rows() == 0)
        throw ShapeError("moce layer: tokens must be [T x " + std::to_string(d_model()) + "], got " +
                         (x.defined() ? to_string(x.shape()) : std::string("undefined")));
}

Tensor MoceLayer::route(Tape& tape, const ExpertGroup& group, std::size_t router_id,
                        const Tensor& x, const Tensor& base, RoutingMode mode,
                        RoutingRecord& record, std::size_t layer_index) const
{
    const std::size_t tokens = x.rows();
    const std::size_t n = group.size();
    const std::size_t k = mode == RoutingMode::kSoft ? n : std::min(options_.top_k, n);

    const Tensor probs = gate(tape, router_logits(tape, group.router, x));
    Tensor weights = probs;
    if (mode == RoutingMode::kTopK && k < n)
        weights = top_k_select(tape, probs, k);
    if (options_.renormalize && mode == RoutingMode::kTopK && k < n)
        weights = normalize_rows(tape, weights);

    auto& log = record.router(layer_index, router_id, n);
    log.tokens += tokens;
    log.gates.push_back(probs);
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t t = 0; t < tokens; ++t) {
        const auto row = probs.values().subspan(t * n, n);
        TokenRoute r;
        r.layer = layer_index;
        r.router = router_id;
        r.token = record.token_offset() + t;
        r.top1 = top_k_indices(row, 1).front();
        if (mode == RoutingMode::kSoft) {
            r.experts.resize(n);
            for (std::size_t i = 0; i < n; ++i)
                r.experts[i] = i;
        } else {
            r.experts = top_k_indices(row, k);
        }
        for (std::size_t i : r.experts) {
            r.weights.push_back(row[i]);
            members[i].push_back(t);
        }
        ++log.top1_counts[r.top1];
        for (std::size_t i = 0; i < n; ++i)
            log.prob_sums[i] += row[i];
        record.log_token(std::move(r));
    }

    Tensor combined(Shape{tokens, d_model()});
    bool first = true;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rows = members[i];
        if (rows.empty())
            continue;
        log.expert_forwards[i] += rows.size();
        const Tensor base_rows = gather_rows(tape, base, rows);
        Tensor term;
        if (options_.combine == CombineForm::kAdapterSum)
            term = adapter_forward(tape, group.experts[i], base_rows, gather_rows(tape, x, rows),
                                   options_.activation);
        else
            term = adapter_delta(tape, group.experts[i], base_rows, options_.activation);
        const Tensor w = pick_column(tape, weights, rows, i);
        const Tensor part = scatter_rows(tape, scale_rows(tape, term, w), rows, tokens);
        combined = first ? part : add(tape, combined, part);
        first = false;
    }
    return combined;
}

Tensor MoceLayer::group_output(Tape& tape, const Tensor& x, const Tensor& base, std::size_t group,
                               RoutingMode mode, RoutingRecord& record,
                               std::size_t layer_index) const
{
    if (group >= groups_.size())
        throw ContractError("moce layer: group " + std::to_string(group) + " outside [0, " +
                            std::to_string(groups_.size()) + ")");
    Tensor mixed = route(tape, groups_[group], group, x, base, mode, record, layer_index);
    if (options_.scale != 1.0)
        mixed = scale(tape, mixed, options_.scale);
    if (options_.combine == CombineForm::kDenseResidual)
        return add(tape, base, mixed);
    return mixed;
}

Tensor MoceLayer::general_output(Tape& tape, const Tensor& x, const Tensor& base,
                                 RoutingRecord& record, std::size_t layer_index) const
{
    Tensor mixed = route(tape, general(), kGeneralRouter, x, base, options_.mode, record,
                         layer_index);
    if (options_.scale != 1.0)
        mixed = scale(tape, mixed, options_.scale);
    return mixed;
}

Tensor MoceLayer::group_path(Tape& tape, const Tensor& x, std::size_t group, RoutingMode mode,
                             RoutingRecord& record, std::size_t layer_index) const
{
    check_input(x);
    const Tensor base = feed_forward(tape, base_, x);
    return group_output(tape, x, base, group, mode, record, layer_index);
}

Tensor MoceLayer::general_path(Tape& tape, const Tensor& x, RoutingRecord& record,
                               std::size_t layer_index) const
{
    check_input(x);
    const Tensor base = feed_forward(tape, base_, x);
    return general_output(tape, x, base, record, layer_index);
}

Tensor MoceLayer::forward(Tape& tape, const Tensor& x, std::size_t group, RoutingRecord& record,
                          std::size_t layer_index) const
{
    check_input(x);
    const Tensor base = feed_forward(tape, base_, x);
    Tensor y = group_output(tape, x, base, group, options_.mode, record, layer_index);
    if (general_)
        y = add(tape, y, general_output(tape, x, base, record, layer_index));
    return y;
}

std::size_t MoceLayer::active_experts_per_token() const
{
    const std::size_t per_router =
        options_.mode == RoutingMode::kSoft ? experts_per_group() : options_.top_k;
    if (!general_)
        return per_router;
    return per_router +
           (options_.mode == RoutingMode::kSoft ? general_->size() : options_.top_k);
}

std::vector<std::pair<std::string, Tensor>> MoceLayer::named_parameters(
    const std::string& prefix) const
{
    std::vector<std::pair<std::string, Tensor>> out;
    auto add_group = [&](const ExpertGroup& g, const std::string& name) {
        out.emplace_back(prefix + name + ".router", g.router);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::string e = prefix + name + ".expert" + std::to_string(i);
            out.emplace_back(e + ".down", g.experts[i].down);
            out.emplace_back(e + ".up", g.experts[i].up);
        }
    };
    for (std::size_t g = 0; g < groups_.size(); ++g)
        add_group(groups_[g], "group" + std::to_string(g));
    if (general_)
        add_group(*general_, "general");
    return out;
}

Tensor moce_layer_forward(Tape& tape, const MoceLayer& layer, const Tensor& x, std::size_t group,
                          RoutingRecord& record)
{
    return layer.group_path(tape, x, group, RoutingMode::kTopK, record);
}

Tensor soft_merge_forward(Tape& tape, const MoceLayer& layer, const Tensor& x, std::size_t group,
                          RoutingRecord& record)
{
    return layer.group_path(tape, x, group, RoutingMode::kSoft, record);
}

Tensor moce_variant_forward(Tape& tape, const MoceLayer& layer, const Tensor& x,
                            std::size_t group, RoutingRecord& record)
{
    if (!layer.has_general())
        throw ConfigError("moce_variant_forward: layer has no general experts");
    return layer.forward(tape, x, group, record);
}

} // namespace moce
