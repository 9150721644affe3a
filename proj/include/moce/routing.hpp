// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "moce/tensor.hpp"

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace moce {

/// Router id used for the always-active general router.
inline constexpr std::size_t kGeneralRouter = std::numeric_limits<std::size_t>::max();

struct TokenRoute {
    std::size_t layer = 0;
    std::size_t router = 0; // group id, or kGeneralRouter
    std::size_t token = 0;  // index within the record
    std::size_t top1 = 0;   // argmax of the gate before truncation
    std::vector<std::size_t> experts;
    std::vector<double> weights; // gate values at `experts`, before any renormalization
};

/// Per-router aggregates over every token the router saw.
struct RouterLog {
    std::size_t experts = 0;
    std::size_t tokens = 0;
    std::vector<std::size_t> top1_counts;
    std::vector<double> prob_sums;
    /// Token rows each expert actually processed.
    std::vector<std::size_t> expert_forwards;
    /// Gate matrices as recorded on the tape, for the balance loss.
    std::vector<Tensor> gates;

    /// f_i: fraction of tokens whose top-1 expert is i.
    std::vector<double> load_fractions() const;
    /// P_i: mean gate probability of expert i.
    std::vector<double> mean_probabilities() const;
};

using RouterKey = std::pair<std::size_t, std::size_t>; // (layer, router)

/// Log of every routing decision made during one or more forward passes.
class RoutingRecord {
public:
    /// Starts a new sequence routed to `group`; subsequent layer calls index
    /// their tokens from the current offset.
    void begin_sequence(std::size_t group, std::size_t length);

    std::size_t token_offset() const { return offset_; }
    std::size_t total_tokens() const { return next_; }
    const std::vector<std::size_t>& sequence_groups() const { return groups_; }

    void log_token(TokenRoute route) { routes_.push_back(std::move(route)); }
    RouterLog& router(std::size_t layer, std::size_t router, std::size_t experts);

    const std::vector<TokenRoute>& routes() const { return routes_; }
    const std::map<RouterKey, RouterLog>& routers() const { return routers_; }
    bool empty() const { return routers_.empty(); }

    /// Drops the tape tensors held for the balance loss.
    void release_gates();

    /// CSV with header `token_idx,group,expert,weight`, one line per selected
    /// expert. The general router is written as group `gen`.
    void write_csv(std::ostream& os) const;

private:
    std::vector<TokenRoute> routes_;
    std::map<RouterKey, RouterLog> routers_;
    std::vector<std::size_t> groups_;
    std::size_t offset_ = 0;
    std::size_t next_ = 0;
};

/// N * sum_i f_i P_i for one router.
double balance_value(std::span<const double> load_fractions, std::span<const double> mean_probs);

/// Switch-style balance loss summed over every router in the record (each
/// router over its own tokens) and multiplied by `coef`. Differentiable
/// through the recorded gate probabilities; f is treated as a constant.
/// An empty record yields 0 and a warning.
Tensor load_balance_loss(Tape& tape, const RoutingRecord& record, double coef = 1.0);

} // namespace moce
