// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace moce::testing {

std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n)
{
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

std::vector<long double> softmax_oracle(const std::vector<double>& v)
{
    long double z = 0.0L;
    for (double x : v)
        z += std::exp(static_cast<long double>(x));
    std::vector<long double> out;
    for (double x : v)
        out.push_back(std::exp(static_cast<long double>(x)) / z);
    return out;
}

long double gelu_oracle(long double x)
{
    return 0.5L * x * (1.0L + std::erf(x / std::sqrt(2.0L)));
}

long double nll_oracle(const std::vector<double>& row, std::size_t target)
{
    return -std::log(softmax_oracle(row)[target]);
}

double two_means_optimum(const std::vector<Point>& points)
{
    const std::size_t n = points.size();
    const std::size_t d = points.front().size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
        double total = 0.0;
        for (std::size_t side = 0; side < 2; ++side) {
            std::vector<double> mean(d, 0.0);
            std::size_t members = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (((mask >> i) & 1U) == side) {
                    ++members;
                    for (std::size_t j = 0; j < d; ++j)
                        mean[j] += points[i][j];
                }
            for (double& m : mean)
                m /= static_cast<double>(members);
            for (std::size_t i = 0; i < n; ++i)
                if (((mask >> i) & 1U) == side)
                    for (std::size_t j = 0; j < d; ++j)
                        total += (points[i][j] - mean[j]) * (points[i][j] - mean[j]);
        }
        best = std::min(best, total);
    }
    return best;
}

std::size_t nearest_oracle(const std::vector<Point>& centroids, const std::vector<double>& e)
{
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < e.size(); ++j)
            d += (e[j] - centroids[c][j]) * (e[j] - centroids[c][j]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

double sse_oracle(const std::vector<Point>& centroids, const std::vector<Point>& points,
                  const std::vector<std::size_t>& labels)
{
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < points[i].size(); ++j) {
            const double diff = points[i][j] - centroids[labels[i]][j];
            total += diff * diff;
        }
    return total;
}

double balance_oracle(const std::vector<double>& f, const std::vector<double>& p)
{
    double total = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        total += f[i] * p[i];
    return static_cast<double>(f.size()) * total;
}

std::vector<Point> planted_blobs(std::size_t count, std::size_t total, std::size_t dim,
                                 double radius, double separation, std::uint64_t seed,
                                 std::vector<std::size_t>* truth)
{
    Rng rng(seed);
    const double axis = separation / std::sqrt(2.0);
    const double sd = radius / std::sqrt(static_cast<double>(dim));
    std::vector<Point> points;
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t c = i % count;
        Point p(dim);
        for (std::size_t j = 0; j < dim; ++j)
            p[j] = (j == c ? axis : 0.0) + rng.normal(0.0, sd);
        points.push_back(std::move(p));
        if (truth)
            truth->push_back(c);
    }
    return points;
}

double gradient_check(const GradientCase& c, double h)
{
    for (const Tensor& t : c.inputs)
        if (t.requires_grad())
            Tensor(t).zero_grad();
    Tape tape;
    const Tensor loss = c.build(tape, c.inputs);
    tape.backward(loss);

    std::vector<double> analytic, numeric;
    for (const Tensor& x : c.inputs) {
        if (!x.requires_grad())
            continue;
        const std::vector<double> a = x.grad_values();
        analytic.insert(analytic.end(), a.begin(), a.end());
        const auto f = [&](const Tensor&) {
            Tape eval(Tape::Mode::kInference);
            return c.build(eval, c.inputs).item();
        };
        const Tensor n = finite_difference_gradient(f, x, h);
        numeric.insert(numeric.end(), n.values().begin(), n.values().end());
    }
    return gradient_relative_error(analytic, numeric);
}

Tensor random_tensor(Rng& rng, Shape shape, double sd, bool requires_grad)
{
    Tensor t(std::move(shape), requires_grad);
    for (double& v : t.values())
        v = rng.normal(0.0, sd);
    return t;
}

Tensor project(Tape& tape, const Tensor& out, std::uint64_t seed)
{
    Rng rng(seed);
    Tensor r = random_tensor(rng, out.shape(), 1.0, false);
    return dot(tape, out, r);
}

namespace {

std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi)
{
    return lo + rng.index(hi - lo + 1);
}

Shape matrix_shape(Rng& rng)
{
    return {dim_in(rng, 1, 8), dim_in(rng, 1, 8)};
}

// Values whose pairwise gaps are at least `gap`, in random order.
std::vector<double> spread_values(Rng& rng, std::size_t n, double gap)
{
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = static_cast<double>(i) * gap + rng.uniform(0.0, 0.3 * gap);
    for (std::size_t i = n; i > 1; --i)
        std::swap(v[i - 1], v[rng.index(i)]);
    return v;
}

GradientCase unary(Tensor x, std::function<Tensor(Tape&, const Tensor&)> op, std::uint64_t seed)
{
    return {{std::move(x)}, [op, seed](Tape& t, const std::vector<Tensor>& in) {
                return project(t, op(t, in[0]), seed);
            }};
}

GradientCase binary(Tensor a, Tensor b,
                    std::function<Tensor(Tape&, const Tensor&, const Tensor&)> op,
                    std::uint64_t seed)
{
    return {{std::move(a), std::move(b)}, [op, seed](Tape& t, const std::vector<Tensor>& in) {
                return project(t, op(t, in[0], in[1]), seed);
            }};
}

std::vector<NamedCaseFactory> build_cases()
{
    std::vector<NamedCaseFactory> cases;
    cases.push_back({"matmul", [](Rng& rng) {
                         const std::size_t m = dim_in(rng, 1, 8), k = dim_in(rng, 1, 8),
                                           n = dim_in(rng, 1, 8);
                         return binary(random_tensor(rng, {m, k}), random_tensor(rng, {k, n}),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return matmul(t, a, b);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"transpose", [](Rng& rng) {
                         return unary(random_tensor(rng, matrix_shape(rng)),
                                      [](Tape& t, const Tensor& a) { return transpose(t, a); },
                                      rng.next());
                     }});
    cases.push_back({"reshape", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         const Shape flat{s[0] * s[1]};
                         return unary(random_tensor(rng, s),
                                      [flat](Tape& t, const Tensor& a) {
                                          return reshape(t, a, flat);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"add", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         return binary(random_tensor(rng, s), random_tensor(rng, s),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return add(t, a, b);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"sub", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         return binary(random_tensor(rng, s), random_tensor(rng, s),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return sub(t, a, b);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"mul", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         return binary(random_tensor(rng, s), random_tensor(rng, s),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return mul(t, a, b);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"scale", [](Rng& rng) {
                         const double f = rng.uniform(-3.0, 3.0);
                         return unary(random_tensor(rng, matrix_shape(rng)),
                                      [f](Tape& t, const Tensor& a) { return scale(t, a, f); },
                                      rng.next());
                     }});
    cases.push_back({"sum", [](Rng& rng) {
                         return unary(random_tensor(rng, matrix_shape(rng)),
                                      [](Tape& t, const Tensor& a) { return sum(t, a); },
                                      rng.next());
                     }});
    cases.push_back({"dot", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         return binary(random_tensor(rng, s), random_tensor(rng, s),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return dot(t, a, b);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"softmax/rows", [](Rng& rng) {
                         return unary(random_tensor(rng, matrix_shape(rng), 2.0),
                                      [](Tape& t, const Tensor& a) { return softmax(t, a, -1); },
                                      rng.next());
                     }});
    cases.push_back({"softmax/columns", [](Rng& rng) {
                         return unary(random_tensor(rng, matrix_shape(rng), 2.0),
                                      [](Tape& t, const Tensor& a) { return softmax(t, a, 0); },
                                      rng.next());
                     }});
    cases.push_back({"softmax/vector", [](Rng& rng) {
                         return unary(random_tensor(rng, {dim_in(rng, 1, 8)}, 2.0),
                                      [](Tape& t, const Tensor& a) { return softmax(t, a); },
                                      rng.next());
                     }});
    cases.push_back({"causal_softmax", [](Rng& rng) {
                         const std::size_t n = dim_in(rng, 1, 8);
                         return unary(random_tensor(rng, {n, n}, 2.0),
                                      [](Tape& t, const Tensor& a) {
                                          return causal_softmax(t, a);
                                      },
                                      rng.next());
                     }});
    for (Activation kind : {Activation::kGelu, Activation::kRelu, Activation::kSilu}) {
        cases.push_back({"activation/" + to_string(kind), [kind](Rng& rng) {
                             Tensor x = random_tensor(rng, matrix_shape(rng), 2.0);
                             // keep relu away from its kink
                             for (double& v : x.values())
                                 if (std::abs(v) < 1e-2)
                                     v = v < 0 ? -1e-2 : 1e-2;
                             return unary(x,
                                          [kind](Tape& t, const Tensor& a) {
                                              return activation(t, a, kind);
                                          },
                                          rng.next());
                         }});
    }
    cases.push_back({"rms_norm", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         Tensor x = random_tensor(rng, s);
                         // rows far from the zero-norm singularity
                         for (double& v : x.values())
                             if (std::abs(v) < 0.1)
                                 v = v < 0 ? -0.1 : 0.1;
                         return binary(x, random_tensor(rng, {s[1]}),
                                       [](Tape& t, const Tensor& a, const Tensor& g) {
                                           return rms_norm(t, a, g);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"slice_cols", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         const std::size_t begin = rng.index(s[1]);
                         const std::size_t count = 1 + rng.index(s[1] - begin);
                         return unary(random_tensor(rng, s),
                                      [begin, count](Tape& t, const Tensor& a) {
                                          return slice_cols(t, a, begin, count);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"concat_cols", [](Rng& rng) {
                         const std::size_t r = dim_in(rng, 1, 8);
                         return binary(random_tensor(rng, {r, dim_in(rng, 1, 4)}),
                                       random_tensor(rng, {r, dim_in(rng, 1, 4)}),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return concat_cols(t, {a, b});
                                       },
                                       rng.next());
                     }});
    cases.push_back({"concat_rows", [](Rng& rng) {
                         const std::size_t c = dim_in(rng, 1, 8);
                         return binary(random_tensor(rng, {dim_in(rng, 1, 4), c}),
                                       random_tensor(rng, {dim_in(rng, 1, 4), c}),
                                       [](Tape& t, const Tensor& a, const Tensor& b) {
                                           return concat_rows(t, {a, b});
                                       },
                                       rng.next());
                     }});
    cases.push_back({"gather_rows", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         std::vector<std::size_t> rows(dim_in(rng, 1, 8));
                         for (auto& r : rows)
                             r = rng.index(s[0]);
                         return unary(random_tensor(rng, s),
                                      [rows](Tape& t, const Tensor& a) {
                                          return gather_rows(t, a, rows);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"scatter_rows", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         const std::size_t total = dim_in(rng, 1, 8);
                         std::vector<std::size_t> rows(s[0]);
                         for (auto& r : rows)
                             r = rng.index(total);
                         return unary(random_tensor(rng, s),
                                      [rows, total](Tape& t, const Tensor& a) {
                                          return scatter_rows(t, a, rows, total);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"pick_column", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         std::vector<std::size_t> rows(dim_in(rng, 1, 8));
                         for (auto& r : rows)
                             r = rng.index(s[0]);
                         const std::size_t col = rng.index(s[1]);
                         return unary(random_tensor(rng, s),
                                      [rows, col](Tape& t, const Tensor& a) {
                                          return pick_column(t, a, rows, col);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"scale_rows", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         return binary(random_tensor(rng, s), random_tensor(rng, {s[0]}),
                                       [](Tape& t, const Tensor& a, const Tensor& w) {
                                           return scale_rows(t, a, w);
                                       },
                                       rng.next());
                     }});
    cases.push_back({"row_sums", [](Rng& rng) {
                         return unary(random_tensor(rng, matrix_shape(rng)),
                                      [](Tape& t, const Tensor& a) { return row_sums(t, a); },
                                      rng.next());
                     }});
    cases.push_back({"mean_rows", [](Rng& rng) {
                         return unary(random_tensor(rng, matrix_shape(rng)),
                                      [](Tape& t, const Tensor& a) { return mean_rows(t, a); },
                                      rng.next());
                     }});
    cases.push_back({"normalize_rows", [](Rng& rng) {
                         Tensor x(matrix_shape(rng), true);
                         for (double& v : x.values())
                             v = rng.uniform(0.1, 2.0);
                         return unary(x,
                                      [](Tape& t, const Tensor& a) {
                                          return normalize_rows(t, a);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"top_k_select", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         Tensor x(s, true);
                         for (std::size_t r = 0; r < s[0]; ++r) {
                             const auto row = spread_values(rng, s[1], 0.1);
                             for (std::size_t c = 0; c < s[1]; ++c)
                                 x.at(r, c) = row[c];
                         }
                         const std::size_t k = 1 + rng.index(s[1]);
                         return unary(x,
                                      [k](Tape& t, const Tensor& a) {
                                          return top_k_select(t, a, k);
                                      },
                                      rng.next());
                     }});
    cases.push_back({"cross_entropy", [](Rng& rng) {
                         const Shape s = matrix_shape(rng);
                         std::vector<std::size_t> targets(s[0]);
                         std::vector<bool> mask(s[0]);
                         for (std::size_t i = 0; i < s[0]; ++i) {
                             targets[i] = rng.index(s[1]);
                             mask[i] = rng.uniform() < 0.7;
                         }
                         mask[rng.index(s[0])] = true;
                         Tensor logits = random_tensor(rng, s, 2.0);
                         return GradientCase{
                             {logits}, [targets, mask](Tape& t, const std::vector<Tensor>& in) {
                                 return cross_entropy(t, in[0], targets, mask);
                             }};
                     }});
    return cases;
}

} // namespace

const std::vector<NamedCaseFactory>& operation_cases()
{
    static const std::vector<NamedCaseFactory> cases = build_cases();
    return cases;
}

} // namespace moce::testing

namespace moce::testing {

ModelConfig micro_config(RoutingMode mode)
{
    ModelConfig c;
    c.vocab_size = 11;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 12;
    c.max_seq_len = 8;
    c.adapter_rank = 3;
    c.groups = 2;
    c.experts = 2;
    c.top_k = mode == RoutingMode::kSoft ? 2 : 1;
    c.mode = mode;
    c.train_attention = true;
    return c;
}

std::vector<std::size_t> random_ids(Rng& rng, std::size_t length, std::size_t vocab)
{
    std::vector<std::size_t> ids(length);
    for (auto& id : ids)
        id = rng.index(vocab);
    return ids;
}

GradientCase micro_model_case(std::uint64_t seed, RoutingMode mode)
{
    Rng rng(seed);
    ModelConfig c = micro_config(mode);
    c.seed = rng.next();
    const MoceModel model = upcycle_init(DenseModel::init(c), c);
    GradientCase out;
    for (auto& [name, t] : model.named_parameters()) {
        Tensor p = t;
        p.set_requires_grad(true);
        if (name.find(".moce.") != std::string::npos)
            for (double& v : p.values())
                v += rng.normal(0.0, 0.5);
        out.inputs.push_back(p);
    }
    const std::size_t length = 3 + rng.index(c.max_seq_len - 2);
    const auto ids = random_ids(rng, length, c.vocab_size);
    const auto targets = random_ids(rng, length, c.vocab_size);
    std::vector<bool> supervised(length);
    for (std::size_t t = 0; t < length; ++t)
        supervised[t] = t + 1 >= length / 2;
    const std::size_t group = rng.index(c.groups);
    out.build = [model, ids, targets, supervised, group](Tape& tape, const std::vector<Tensor>&) {
        RoutingRecord record;
        const Tensor logits = model_forward(tape, model, ids, group, record);
        return add(tape, lm_loss(tape, logits, targets, supervised),
                   load_balance_loss(tape, record, 0.01));
    };
    return out;
}

ExpertGroup random_group(Rng& rng, const LayerSpec& s)
{
    ExpertGroup g;
    for (std::size_t i = 0; i < s.experts; ++i)
        g.experts.push_back({random_tensor(rng, {s.d, s.rank}, s.sd),
                             random_tensor(rng, {s.rank, s.d}, s.sd)});
    g.router = random_tensor(rng, {s.d, s.experts}, 1.0);
    return g;
}

MoceLayer random_layer(Rng& rng, const LayerSpec& s)
{
    FeedForward base{random_tensor(rng, {s.d, s.d_ff}, s.sd, false),
                     random_tensor(rng, {s.d_ff, s.d}, s.sd, false)};
    std::vector<ExpertGroup> groups;
    for (std::size_t g = 0; g < s.groups; ++g)
        groups.push_back(random_group(rng, s));
    std::optional<ExpertGroup> general;
    if (s.general)
        general = random_group(rng, s);
    MoceLayerOptions o;
    o.top_k = s.top_k;
    o.mode = s.mode;
    o.combine = s.combine;
    return MoceLayer(base, groups, general, o);
}

std::vector<double> vals(const Tensor& t)
{
    return {t.values().begin(), t.values().end()};
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}


RoutingRecord constructed_record(const std::vector<std::vector<double>>& gate_rows)
{
    RoutingRecord rec;
    const std::size_t n = gate_rows.front().size();
    auto& log = rec.router(0, 0, n);
    std::vector<double> flat;
    for (const auto& row : gate_rows) {
        flat.insert(flat.end(), row.begin(), row.end());
        ++log.top1_counts[top_k_indices(row, 1).front()];
        for (std::size_t i = 0; i < n; ++i)
            log.prob_sums[i] += row[i];
        ++log.tokens;
    }
    log.gates.push_back(Tensor::matrix(gate_rows.size(), n, flat));
    return rec;
}

} // namespace moce::testing
