// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "moce/tensor.hpp"

#include <vector>

namespace moce {

/// Adam over a fixed, ordered list of parameters.
class Adam {
public:
    struct Options {
        double lr = 2e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        /// Global gradient-norm clip; 0 disables.
        double clip_norm = 0.0;
    };

    Adam(std::vector<Tensor> params, Options options);

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient are left untouched.
    void step();
    void zero_grad();
    std::size_t steps() const { return t_; }
    const Options& options() const { return options_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    Options options_;
    std::size_t t_ = 0;
};

} // namespace moce
