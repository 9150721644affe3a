// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used by the unit tests and the
// acceptance runner. Nothing here calls into the library's own math.

#pragma once

#include "moce/clustering.hpp"
#include "moce/model.hpp"
#include "moce/random.hpp"
#include "moce/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace moce::testing {

// ---- direct oracles --------------------------------------------------------

std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n);

/// exp(v_i) / sum_j exp(v_j) in long double, no max subtraction.
std::vector<long double> softmax_oracle(const std::vector<double>& v);

/// 0.5 x (1 + erf(x / sqrt 2)) in long double.
long double gelu_oracle(long double x);

/// -log softmax(row)[target], in long double.
long double nll_oracle(const std::vector<double>& row, std::size_t target);

/// Minimum k=2 SSE over every labelling of the points (2^n enumeration).
double two_means_optimum(const std::vector<Point>& points);

std::size_t nearest_oracle(const std::vector<Point>& centroids, const std::vector<double>& e);

double sse_oracle(const std::vector<Point>& centroids, const std::vector<Point>& points,
                  const std::vector<std::size_t>& labels);

/// N * sum f_i P_i written out term by term.
double balance_oracle(const std::vector<double>& f, const std::vector<double>& p);

/// `total` points spread round-robin over `count` isotropic Gaussian blobs in
/// `dim` >= count dimensions. Centre c sits on axis c, so every pair of centres
/// is `separation` apart; the root-mean-square distance of a point from its
/// centre is `radius`.
std::vector<Point> planted_blobs(std::size_t count, std::size_t total, std::size_t dim,
                                 double radius, double separation, std::uint64_t seed,
                                 std::vector<std::size_t>* truth = nullptr);

// ---- gradient checking -----------------------------------------------------

/// Builds a scalar from the inputs on the given tape.
using ScalarBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradientCase {
    std::vector<Tensor> inputs; // leaves; those with requires_grad are checked
    ScalarBuilder build;
};

/// Relative error between backward() and central differences, taken over the
/// concatenated gradient of every checked input.
double gradient_check(const GradientCase& c, double h = 1e-5);

Tensor random_tensor(Rng& rng, Shape shape, double sd = 1.0, bool requires_grad = true);

/// A fixed random projection that turns any output into a scalar whose
/// gradient exercises every element.
Tensor project(Tape& tape, const Tensor& out, std::uint64_t seed);

struct NamedCaseFactory {
    std::string name;
    std::function<GradientCase(Rng&)> make;
};

/// One factory per differentiable tensor operation, each drawing random
/// shapes up to 8 x 8.
const std::vector<NamedCaseFactory>& operation_cases();

// ---- layers ------------------------------------------------------------------

struct LayerSpec {
    std::size_t d = 4, d_ff = 6, rank = 3, groups = 2, experts = 2, top_k = 2;
    bool general = false;
    RoutingMode mode = RoutingMode::kTopK;
    CombineForm combine = CombineForm::kAdapterSum;
    double sd = 0.5;
};

ExpertGroup random_group(Rng& rng, const LayerSpec& s);
MoceLayer random_layer(Rng& rng, const LayerSpec& s);

std::vector<double> vals(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// A record holding one router whose tokens had exactly these gate rows.
RoutingRecord constructed_record(const std::vector<std::vector<double>>& gate_rows);

// ---- models ------------------------------------------------------------------

/// Config of the smallest model the gradient suite checks end to end:
/// vocab 11, d_model 8, 2 layers, 2 groups of 2 experts.
ModelConfig micro_config(RoutingMode mode);

/// A micro model with every tensor trainable and the zero-initialised
/// adapters and routers perturbed, whose loss is the supervised next-token
/// loss of a random sequence plus a small balance term.
GradientCase micro_model_case(std::uint64_t seed, RoutingMode mode);

/// Random token ids in [0, vocab).
std::vector<std::size_t> random_ids(Rng& rng, std::size_t length, std::size_t vocab);

} // namespace moce::testing
