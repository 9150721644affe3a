// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/routing.hpp"

#include "moce/error.hpp"

#include <cstdio>
#include <iostream>
#include <ostream>

namespace moce {

std::vector<double> RouterLog::load_fractions() const
{
    std::vector<double> f(experts, 0.0);
    if (tokens == 0)
        return f;
    for (std::size_t i = 0; i < experts; ++i)
        f[i] = static_cast<double>(top1_counts[i]) / static_cast<double>(tokens);
    return f;
}

std::vector<double> RouterLog::mean_probabilities() const
{
    std::vector<double> p(experts, 0.0);
    if (tokens == 0)
        return p;
    for (std::size_t i = 0; i < experts; ++i)
        p[i] = prob_sums[i] / static_cast<double>(tokens);
    return p;
}

void RoutingRecord::begin_sequence(std::size_t group, std::size_t length)
{
    offset_ = next_;
    next_ += length;
    groups_.push_back(group);
}

RouterLog& RoutingRecord::router(std::size_t layer, std::size_t router, std::size_t experts)
{
    auto& log = routers_[{layer, router}];
    if (log.experts == 0) {
        log.experts = experts;
        log.top1_counts.assign(experts, 0);
        log.prob_sums.assign(experts, 0.0);
        log.expert_forwards.assign(experts, 0);
    } else if (log.experts != experts) {
        throw ShapeError("routing record: router expert count changed");
    }
    return log;
}

void RoutingRecord::release_gates()
{
    for (auto& [key, log] : routers_)
        log.gates.clear();
}

void RoutingRecord::write_csv(std::ostream& os) const
{
    os << "token_idx,group,expert,weight\n";
    char buf[40];
    for (const auto& r : routes_) {
        for (std::size_t j = 0; j < r.experts.size(); ++j) {
            os << r.token << ',';
            if (r.router == kGeneralRouter)
                os << "gen";
            else
                os << r.router;
            std::snprintf(buf, sizeof(buf), ",%zu,%.17g\n", r.experts[j], r.weights[j]);
            os << buf;
        }
    }
}

double balance_value(std::span<const double> load_fractions, std::span<const double> mean_probs)
{
    if (load_fractions.size() != mean_probs.size() || load_fractions.empty())
        throw ShapeError("balance_value: mismatched or empty statistics");
    double acc = 0.0;
    for (std::size_t i = 0; i < load_fractions.size(); ++i)
        acc += load_fractions[i] * mean_probs[i];
    return static_cast<double>(load_fractions.size()) * acc;
}

Tensor load_balance_loss(Tape& tape, const RoutingRecord& record, double coef)
{
    Tensor total = Tensor::scalar(0.0);
    bool any = false;
    for (const auto& [key, log] : record.routers()) {
        if (log.tokens == 0 || log.gates.empty())
            continue;
        const Tensor gates = log.gates.size() == 1 ? log.gates.front() : concat_rows(tape, log.gates);
        const Tensor probs = mean_rows(tape, gates);
        auto f = log.load_fractions();
        for (double& v : f)
            v *= static_cast<double>(log.experts);
        const Tensor term = dot(tape, probs, Tensor::vector(std::move(f)));
        total = any ? add(tape, total, term) : term;
        any = true;
    }
    if (!any) {
        std::cerr << "warning: load_balance_loss: no routed tokens in record; returning 0\n";
        return Tensor::scalar(0.0);
    }
    return coef == 1.0 ? total : scale(tape, total, coef);
}

} // namespace moce
