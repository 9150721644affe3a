// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/optim.hpp"

#include "moce/error.hpp"

#include <cmath>

namespace moce {

Adam::Adam(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options)
{
    if (!(options_.lr > 0.0))
        throw ConfigError("adam: learning rate must be positive");
    for (const Tensor& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step()
{
    ++t_;
    double scale = 1.0;
    if (options_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const Tensor& p : params_)
            for (double g : p.grad())
                sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > options_.clip_norm)
            scale = options_.clip_norm / norm;
    }
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad())
            continue;
        const auto g = p.grad();
        auto w = p.values();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * scale;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            w[j] -= options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
            if (!std::isfinite(w[j]))
                throw NumericError("adam: parameter became non-finite at step " +
                                   std::to_string(t_));
        }
    }
    zero_grad();
}

void Adam::zero_grad()
{
    for (Tensor& p : params_)
        p.zero_grad();
}

} // namespace moce
