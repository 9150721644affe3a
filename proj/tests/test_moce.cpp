// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/error.hpp"
#include "moce/moce_layer.hpp"
#include "moce/routing.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace moce;
using namespace moce::testing;

namespace {

// Token-by-token evaluation of sum_i TopK(softmax(W^T x))_i A_i(x) written
// directly from the definitions, without the tensor engine.
std::vector<double> direct_group_output(const MoceLayer& layer, const ExpertGroup& g,
                                        const std::vector<double>& x, std::size_t tokens,
                                        std::size_t k)
{
    const std::size_t d = layer.d_model();
    const std::size_t d_ff = layer.base().w_in.cols();
    const std::size_t n = g.size();
    std::vector<double> y(tokens * d, 0.0);
    for (std::size_t t = 0; t < tokens; ++t) {
        const std::vector<double> xt(x.begin() + static_cast<long>(t * d),
                                     x.begin() + static_cast<long>((t + 1) * d));
        auto hidden = matmul_oracle(xt, vals(layer.base().w_in), 1, d, d_ff);
        for (double& h : hidden)
            h = static_cast<double>(gelu_oracle(h));
        const auto e = matmul_oracle(hidden, vals(layer.base().w_out), 1, d_ff, d);
        const auto logits = matmul_oracle(xt, vals(g.router), 1, d, n);
        const auto probs = softmax_oracle(logits);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t i = order[j];
            const auto& a = g.experts[i];
            const std::size_t r = a.rank();
            auto z = matmul_oracle(e, vals(a.down), 1, d, r);
            for (double& v : z)
                v = static_cast<double>(gelu_oracle(v));
            const auto delta = matmul_oracle(z, vals(a.up), 1, r, d);
            for (std::size_t c = 0; c < d; ++c)
                y[t * d + c] += static_cast<double>(probs[i]) * (delta[c] + xt[c]);
        }
    }
    return y;
}

} // namespace

TEST_CASE("router logits")
{
    Tape tape;
    const Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const Tensor x = Tensor::vector({0.3, -1.2, 4.0});
    const Tensor h = router_logits(tape, eye, x);
    CHECK(h.shape() == Shape{3});
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(h[i] == x[i]);

    const Tensor zero(Shape{3, 4});
    const Tensor g = gate(tape, router_logits(tape, zero, x));
    for (double v : g.values())
        CHECK(v == 0.25);

    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const Tensor w = random_tensor(rng, {5, 3}, 1.0, false);
        const Tensor xs = random_tensor(rng, {4, 5}, 1.0, false);
        const Tensor out = router_logits(tape, w, xs);
        const auto expect = matmul_oracle(vals(xs), vals(w), 4, 5, 3);
        for (std::size_t j = 0; j < expect.size(); ++j)
            CHECK(std::abs(out[j] - expect[j]) <= 1e-12);
    }
    CHECK_THROWS_AS(router_logits(tape, Tensor(Shape{4, 2}), x), ShapeError);
}

TEST_CASE("gate examples")
{
    Tape tape;
    const Tensor uniform = gate(tape, Tensor::vector({0, 0, 0, 0}));
    for (double v : uniform.values())
        CHECK(v == 0.25);
    CHECK(gate(tape, Tensor::vector({-3.7})).item() == 1.0);
    const Tensor g = gate(tape, Tensor::vector({1, 2, 3}));
    const auto ref = softmax_oracle({1, 2, 3});
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::abs(static_cast<long double>(g[i]) - ref[i]) <= 1e-15L);
}

TEST_CASE("top-k selection matches a brute-force sort")
{
    Rng rng(21);
    Tape tape;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.index(8);
        std::vector<double> w(n);
        // coarse values so ties are common
        for (double& v : w)
            v = static_cast<double>(rng.index(4)) / 4.0;
        const std::size_t k = 1 + rng.index(n);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return w[a] != w[b] ? w[a] > w[b] : a < b;
        });
        std::vector<double> expect(n, 0.0);
        for (std::size_t j = 0; j < k; ++j)
            expect[order[j]] = w[order[j]];
        const Tensor got = top_k_select(tape, Tensor::vector(w), k);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(got[i] == expect[i]);
        const auto idx = top_k_indices(w, k);
        CHECK(std::equal(idx.begin(), idx.end(), order.begin()));
    }
}

TEST_CASE("adapter examples")
{
    Tape tape;
    Rng rng(2);
    AdapterExpert zero_up = AdapterExpert::identity_init(4, 3, 0.5, rng);
    const Tensor x = random_tensor(rng, {2, 4}, 1.0, false);
    const Tensor base = random_tensor(rng, {2, 4}, 1.0, false);
    CHECK(max_abs_diff(adapter_forward(tape, zero_up, base, x, Activation::kGelu), x) == 0.0);

    AdapterExpert a{random_tensor(rng, {4, 3}), random_tensor(rng, {3, 4})};
    const Tensor zero_base(Shape{2, 4});
    CHECK(max_abs_diff(adapter_forward(tape, a, zero_base, x, Activation::kGelu), x) == 0.0);

    const AdapterExpert r1{Tensor::matrix({{0.5}, {0.25}}), Tensor::matrix({{2.0, -1.0}})};
    const Tensor b1 = Tensor::matrix({{1.0, 2.0}});
    const Tensor x1 = Tensor::matrix({{0.1, 0.2}});
    const Tensor out = adapter_forward(tape, r1, b1, x1, Activation::kGelu);
    const double z = 0.5 * 1.0 + 0.25 * 2.0;
    const double s = static_cast<double>(gelu_oracle(z));
    CHECK(std::abs(out[0] - (2.0 * s + 0.1)) <= 1e-15);
    CHECK(std::abs(out[1] - (-1.0 * s + 0.2)) <= 1e-15);

    CHECK_THROWS_AS(adapter_forward(tape, a, base, Tensor(Shape{2, 3}), Activation::kGelu),
                    ShapeError);
}

TEST_CASE("single expert layer returns its adapter")
{
    Rng rng(6);
    LayerSpec s;
    s.groups = 1;
    s.experts = 1;
    s.top_k = 1;
    const MoceLayer layer = random_layer(rng, s);
    const Tensor x = random_tensor(rng, {3, 4}, 1.0, false);
    Tape tape;
    RoutingRecord rec;
    const Tensor y = moce_layer_forward(tape, layer, x, 0, rec);
    const Tensor base = feed_forward(tape, layer.base(), x);
    const Tensor a = adapter_forward(tape, layer.group(0).experts[0], base, x, Activation::kGelu);
    CHECK(max_abs_diff(y, a) == 0.0);
    const Tensor soft = soft_merge_forward(tape, layer, x, 0, rec);
    CHECK(max_abs_diff(soft, a) == 0.0);
}

TEST_CASE("zeroed adapters with k = N are the identity")
{
    Rng rng(7);
    for (std::size_t n : {1, 2, 4}) {
        LayerSpec s;
        s.experts = n;
        s.top_k = n;
        MoceLayer layer = random_layer(rng, s);
        for (std::size_t g = 0; g < layer.num_groups(); ++g)
            for (auto& e : layer.group(g).experts)
                std::fill(e.up.values().begin(), e.up.values().end(), 0.0);
        const Tensor x = random_tensor(rng, {5, 4}, 1.0, false);
        Tape tape;
        RoutingRecord rec;
        CHECK(max_abs_diff(moce_layer_forward(tape, layer, x, 1, rec), x) <= 1e-12);
    }
}

TEST_CASE("layer output matches a direct evaluation")
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        LayerSpec s;
        s.experts = 1 + rng.index(4);
        s.top_k = 1 + rng.index(s.experts);
        s.groups = 1 + rng.index(3);
        const MoceLayer layer = random_layer(rng, s);
        const std::size_t tokens = 1 + rng.index(6);
        const Tensor x = random_tensor(rng, {tokens, 4}, 1.0, false);
        const std::size_t g = rng.index(s.groups);
        Tape tape;
        RoutingRecord rec;
        const Tensor y = moce_layer_forward(tape, layer, x, g, rec);
        const auto expect = direct_group_output(layer, layer.group(g), vals(x), tokens, s.top_k);
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(std::abs(y[i] - expect[i]) <= 1e-12);

        const Tensor soft = soft_merge_forward(tape, layer, x, g, rec);
        const auto expect_soft =
            direct_group_output(layer, layer.group(g), vals(x), tokens, s.experts);
        for (std::size_t i = 0; i < expect_soft.size(); ++i)
            CHECK(std::abs(soft[i] - expect_soft[i]) <= 1e-12);
    }
}

TEST_CASE("soft merge equals top-k with k = N")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        LayerSpec s;
        s.experts = 1 + rng.index(5);
        s.top_k = s.experts;
        const MoceLayer layer = random_layer(rng, s);
        const Tensor x = random_tensor(rng, {1 + rng.index(6), 4}, 1.0, false);
        Tape tape;
        RoutingRecord rec;
        const Tensor a = soft_merge_forward(tape, layer, x, 0, rec);
        const Tensor b = moce_layer_forward(tape, layer, x, 0, rec);
        CHECK(max_abs_diff(a, b) <= 1e-12);
    }
}

TEST_CASE("variant is the group path plus the general path")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        LayerSpec s;
        s.general = true;
        s.experts = 2 + rng.index(3);
        s.top_k = 1 + rng.index(s.experts);
        s.mode = rng.index(2) ? RoutingMode::kTopK : RoutingMode::kSoft;
        const MoceLayer layer = random_layer(rng, s);
        const Tensor x = random_tensor(rng, {1 + rng.index(6), 4}, 1.0, false);
        const std::size_t g = rng.index(s.groups);
        Tape tape;
        RoutingRecord rec;
        const Tensor y = moce_variant_forward(tape, layer, x, g, rec);
        const Tensor group = layer.group_path(tape, x, g, s.mode, rec);
        const Tensor general = layer.general_path(tape, x, rec);
        const Tensor sum2 = add(tape, group, general);
        CHECK(max_abs_diff(y, sum2) <= 1e-12);

        // two-pass oracle
        const std::size_t k = s.mode == RoutingMode::kSoft ? s.experts : s.top_k;
        const auto a = direct_group_output(layer, layer.group(g), vals(x), x.rows(), k);
        const auto b = direct_group_output(layer, layer.general(), vals(x), x.rows(), k);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(std::abs(y[i] - (a[i] + b[i])) <= 1e-12);
    }
}

TEST_CASE("variant with zeroed general experts adds x")
{
    Rng rng(13);
    LayerSpec s;
    s.general = true;
    s.experts = 3;
    s.top_k = 3;
    MoceLayer layer = random_layer(rng, s);
    for (auto& e : layer.general().experts)
        std::fill(e.up.values().begin(), e.up.values().end(), 0.0);
    const Tensor x = random_tensor(rng, {4, 4}, 1.0, false);
    Tape tape;
    RoutingRecord rec;
    const Tensor y = moce_variant_forward(tape, layer, x, 1, rec);
    const Tensor group = moce_layer_forward(tape, layer, x, 1, rec);
    CHECK(max_abs_diff(y, add(tape, group, x)) <= 1e-12);

    LayerSpec plain;
    const MoceLayer no_general = random_layer(rng, plain);
    CHECK_THROWS_AS(moce_variant_forward(tape, no_general, x, 0, rec), ConfigError);
}

TEST_CASE("group index out of range")
{
    Rng rng(1);
    const MoceLayer layer = random_layer(rng, LayerSpec{});
    Tape tape;
    RoutingRecord rec;
    CHECK_THROWS_AS(moce_layer_forward(tape, layer, random_tensor(rng, {2, 4}), 2, rec),
                    ContractError);
}

TEST_CASE("routing record invariants")
{
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Rng rng(seed);
        LayerSpec s;
        s.experts = 1 + rng.index(5);
        s.top_k = 1 + rng.index(s.experts);
        s.general = rng.index(2) == 1;
        const MoceLayer layer = random_layer(rng, s);
        const std::size_t tokens = 1 + rng.index(7);
        const Tensor x = random_tensor(rng, {tokens, 4}, 1.0, false);
        Tape tape;
        RoutingRecord rec;
        rec.begin_sequence(1, tokens);
        layer.forward(tape, x, 1, rec);

        for (const auto& r : rec.routes()) {
            CHECK(r.experts.size() == s.top_k);
            const auto& log = rec.routers().at({0, r.router});
            const auto& gates = log.gates.front();
            double total = 0.0;
            for (std::size_t i = 0; i < s.experts; ++i)
                total += gates.at(r.token, i);
            CHECK(std::abs(total - 1.0) <= 1e-12);
            for (std::size_t j = 0; j < r.experts.size(); ++j)
                CHECK(r.weights[j] == gates.at(r.token, r.experts[j]));
        }
        std::size_t routers = 0;
        for (const auto& [key, log] : rec.routers()) {
            ++routers;
            CHECK(log.tokens == tokens);
            const std::size_t forwards =
                std::accumulate(log.expert_forwards.begin(), log.expert_forwards.end(),
                                std::size_t{0});
            CHECK(forwards == tokens * s.top_k);
            const auto f = log.load_fractions();
            CHECK(std::abs(std::accumulate(f.begin(), f.end(), 0.0) - 1.0) <= 1e-9);
        }
        CHECK(routers == (s.general ? 2u : 1u));
        CHECK(layer.active_experts_per_token() == (s.general ? 2 : 1) * s.top_k);
    }
}

TEST_CASE("non-selected experts do no work")
{
    Rng rng(31);
    LayerSpec s;
    s.experts = 4;
    s.top_k = 1;
    s.groups = 1;
    MoceLayer layer = random_layer(rng, s);
    // a router that sends every token to expert 2
    Tensor& w = layer.group(0).router;
    std::fill(w.values().begin(), w.values().end(), 0.0);
    const Tensor x(Shape{5, 4}, std::vector<double>(20, 1.0));
    for (std::size_t r = 0; r < 4; ++r)
        w.at(r, 2) = 1.0;
    Tape tape;
    RoutingRecord rec;
    moce_layer_forward(tape, layer, x, 0, rec);
    const auto& log = rec.routers().at({0, 0});
    CHECK(log.expert_forwards == std::vector<std::size_t>{0, 0, 5, 0});
}

TEST_CASE("inactive groups receive no gradient")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        LayerSpec s;
        s.groups = 3;
        s.experts = 3;
        s.top_k = 1 + rng.index(3);
        s.general = rng.index(2) == 1;
        const MoceLayer layer = random_layer(rng, s);
        const std::size_t active = rng.index(3);
        const Tensor x = random_tensor(rng, {4, 4}, 1.0, false);
        Tape tape;
        RoutingRecord rec;
        const Tensor y = layer.forward(tape, x, active, rec);
        const Tensor loss = add(tape, project(tape, y, seed), load_balance_loss(tape, rec, 0.01));
        tape.backward(loss);
        for (const auto& [name, p] : layer.named_parameters("")) {
            const bool in_active = name.rfind("group" + std::to_string(active) + ".", 0) == 0 ||
                                   name.rfind("general.", 0) == 0;
            double norm = 0.0;
            for (double g : p.grad_values())
                norm += g * g;
            if (in_active)
                continue;
            INFO(name);
            CHECK(norm == 0.0);
        }
    }
}

TEST_CASE("layer gradients match central differences")
{
    for (RoutingMode mode : {RoutingMode::kTopK, RoutingMode::kSoft}) {
        double worst = 0.0;
        int checked = 0;
        for (std::uint64_t seed = 0; checked < 30; ++seed) {
            Rng rng(derive_seed(seed, "layer-grad"));
            LayerSpec s;
            s.d = 4;
            s.groups = 2;
            s.experts = 2;
            s.top_k = 1;
            s.mode = mode;
            const MoceLayer layer = random_layer(rng, s);
            const std::size_t g = rng.index(2);
            Tensor x = random_tensor(rng, {3, 4}, 1.0, true);

            // top-1 is only differentiable away from ties; skip draws whose
            // gate margin is within reach of the finite-difference step
            {
                Tape probe(Tape::Mode::kInference);
                const Tensor p = gate(probe, router_logits(probe, layer.group(g).router, x));
                double margin = 1.0;
                for (std::size_t t = 0; t < 3; ++t)
                    margin = std::min(margin, std::abs(p.at(t, 0) - p.at(t, 1)));
                if (margin < 1e-3)
                    continue;
            }
            ++checked;
            std::vector<Tensor> inputs{x};
            for (const auto& [name, p] : layer.named_parameters(""))
                inputs.push_back(p);
            const GradientCase c{inputs, [&layer, g, seed](Tape& t, const std::vector<Tensor>& in) {
                                     RoutingRecord rec;
                                     const Tensor y = layer.forward(t, in[0], g, rec);
                                     return add(t, project(t, y, seed),
                                                load_balance_loss(t, rec, 0.01));
                                 }};
            worst = std::max(worst, gradient_check(c));
        }
        INFO(to_string(mode) << " worst relative error " << worst);
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("balance loss on constructed records")
{
    Tape tape;
    const std::vector<std::vector<double>> uniform(8, std::vector<double>(4, 0.25));
    const RoutingRecord u = constructed_record(uniform);
    CHECK(std::abs(load_balance_loss(tape, u).item() - 1.0) <= 1e-9);
    CHECK(std::abs(load_balance_loss(tape, u, 0.01).item() - 0.01) <= 1e-9);
    const auto& ulog = u.routers().at({0, 0});
    CHECK(std::abs(balance_oracle(ulog.load_fractions(), ulog.mean_probabilities()) - 1.0) <=
          1e-9);

    const double e = 1e-12;
    const std::vector<std::vector<double>> collapsed(8, {1.0 - 3 * e, e, e, e});
    const RoutingRecord c = constructed_record(collapsed);
    CHECK(std::abs(load_balance_loss(tape, c).item() - 4.0) <= 1e-9);

    const RoutingRecord single = constructed_record({{1.0}, {1.0}, {1.0}});
    CHECK(load_balance_loss(tape, single).item() == 1.0);

    const RoutingRecord empty;
    CHECK(load_balance_loss(tape, empty).item() == 0.0);
}

TEST_CASE("balance loss matches the direct formula on live records")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        LayerSpec s;
        s.experts = 4;
        s.top_k = 2;
        s.general = true;
        const MoceLayer layer = random_layer(rng, s);
        Tape tape;
        RoutingRecord rec;
        for (int seq = 0; seq < 3; ++seq) {
            const std::size_t g = rng.index(2);
            const Tensor x = random_tensor(rng, {3, 4}, 1.0, false);
            rec.begin_sequence(g, 3);
            layer.forward(tape, x, g, rec);
        }
        double expect = 0.0;
        for (const auto& [key, log] : rec.routers())
            expect += balance_oracle(log.load_fractions(), log.mean_probabilities());
        CHECK(std::abs(load_balance_loss(tape, rec).item() - expect) <= 1e-12);
    }
}

TEST_CASE("routing csv")
{
    Rng rng(3);
    LayerSpec s;
    s.general = true;
    s.top_k = 1;
    const MoceLayer layer = random_layer(rng, s);
    Tape tape;
    RoutingRecord rec;
    rec.begin_sequence(1, 2);
    layer.forward(tape, random_tensor(rng, {2, 4}), 1, rec);
    std::ostringstream os;
    rec.write_csv(os);
    std::istringstream lines(os.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "token_idx,group,expert,weight");
    std::size_t rows = 0, general = 0;
    while (std::getline(lines, line)) {
        ++rows;
        if (line.find(",gen,") != std::string::npos)
            ++general;
        else
            CHECK(line.find(",1,") != std::string::npos);
    }
    CHECK(rows == 4);
    CHECK(general == 2);
}

TEST_CASE("dense residual combine preserves the base network")
{
    Rng rng(17);
    LayerSpec s;
    s.experts = 4;
    s.top_k = 2;
    s.combine = CombineForm::kDenseResidual;
    s.general = true;
    MoceLayer layer = random_layer(rng, s);
    for (std::size_t g = 0; g < layer.num_groups(); ++g)
        for (auto& e : layer.group(g).experts)
            std::fill(e.up.values().begin(), e.up.values().end(), 0.0);
    for (auto& e : layer.general().experts)
        std::fill(e.up.values().begin(), e.up.values().end(), 0.0);
    const Tensor x = random_tensor(rng, {5, 4}, 1.0, false);
    Tape tape;
    RoutingRecord rec;
    const Tensor y = layer.forward(tape, x, 0, rec);
    CHECK(max_abs_diff(y, feed_forward(tape, layer.base(), x)) == 0.0);
}

TEST_CASE("layer configuration errors")
{
    Rng rng(1);
    LayerSpec s;
    const MoceLayer ok = random_layer(rng, s);
    std::vector<ExpertGroup> groups{ok.group(0), ok.group(1)};
    MoceLayerOptions o;
    o.top_k = 3;
    CHECK_THROWS_AS(MoceLayer(ok.base(), groups, std::nullopt, o), ConfigError);
    o.top_k = 1;
    groups[1].experts.pop_back();
    CHECK_THROWS_AS(MoceLayer(ok.base(), groups, std::nullopt, o), ConfigError);
    CHECK(parse_routing_mode("soft") == RoutingMode::kSoft);
    CHECK_THROWS_AS(parse_routing_mode("hard"), ConfigError);
}
