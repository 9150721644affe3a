// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/tensor.hpp"

#include "moce/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace moce {

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank(const char* op, const Tensor& t, std::size_t rank)
{
    if (!t.defined())
        throw ContractError(std::string(op) + ": undefined tensor");
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

// Layout of the independent 1-D lanes a reduction along `axis` runs over.
struct Lanes {
    std::size_t count;
    std::size_t length;
    std::size_t stride;
    std::size_t offset_step;

    std::size_t offset(std::size_t lane) const { return lane * offset_step; }
};

Lanes lanes_for(const char* op, const Tensor& v, int axis)
{
    const auto rank = static_cast<int>(v.rank());
    if (rank < 1 || rank > 2)
        throw ShapeError(std::string(op) + ": rank 1 or 2 required, got " + to_string(v.shape()));
    const int a = axis < 0 ? rank + axis : axis;
    if (a < 0 || a >= rank)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         to_string(v.shape()));
    if (v.dim(static_cast<std::size_t>(a)) == 0)
        throw ShapeError(std::string(op) + ": empty axis in " + to_string(v.shape()));
    if (rank == 1)
        return {1, v.dim(0), 1, 0};
    if (a == 1)
        return {v.dim(0), v.dim(1), 1, v.dim(1)};
    return {v.dim(1), v.dim(0), v.dim(1), 1};
}

} // namespace

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>())
{
    impl_->data.assign(shape_numel(shape), 0.0);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>())
{
    if (shape_numel(shape) != values.size())
        throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad)
{
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad)
{
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c)
            throw ShapeError("tensor: ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return matrix(r, c, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const
{
    if (!impl_)
        throw ContractError("tensor: undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const
{
    const auto& s = shape();
    if (axis >= s.size())
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         to_string(s));
    return s[axis];
}

std::size_t Tensor::rows() const
{
    require_rank("rows", *this, 2);
    return impl_->shape[0];
}

std::size_t Tensor::cols() const
{
    require_rank("cols", *this, 2);
    return impl_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const
{
    return impl_->data[r * impl_->shape[1] + c];
}

double& Tensor::at(std::size_t r, std::size_t c)
{
    return impl_->data[r * impl_->shape[1] + c];
}

double Tensor::item() const
{
    if (numel() != 1)
        throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    return impl_->data[0];
}

std::vector<double> Tensor::grad_values() const
{
    if (impl_->grad.empty())
        return std::vector<double>(impl_->data.size(), 0.0);
    return impl_->grad;
}

std::span<double> Tensor::grad_buffer() const
{
    if (impl_->grad.empty())
        impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

Tensor Tensor::clone() const
{
    Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
    return out;
}

Tensor Tensor::detached() const
{
    return Tensor(impl_->shape, impl_->data, false);
}

// ---- Tape ---------------------------------------------------------------

bool Tape::wants(std::initializer_list<const Tensor*> inputs) const
{
    if (!recording())
        return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(Tensor& output, std::function<void()> rule)
{
    output.set_requires_grad(true);
    nodes_.push_back(std::move(rule));
}

void Tape::backward(const Tensor& loss)
{
    if (consumed_)
        throw StateError("backward: tape has already been replayed");
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar, got " +
                            (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
    if (!loss.requires_grad())
        throw ContractError("backward: loss is not connected to the tape");
    consumed_ = true;
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        (*it)();
    nodes_.clear();
}

// ---- activations --------------------------------------------------------

Activation parse_activation(const std::string& name)
{
    if (name == "gelu")
        return Activation::kGelu;
    if (name == "relu")
        return Activation::kRelu;
    if (name == "silu")
        return Activation::kSilu;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation kind)
{
    switch (kind) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kSilu: return "silu";
    }
    return "?";
}

double activate(Activation kind, double x)
{
    switch (kind) {
    case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kSilu: return x / (1.0 + std::exp(-x));
    }
    return x;
}

double activate_derivative(Activation kind, double x)
{
    switch (kind) {
    case Activation::kGelu: {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
    }
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kSilu: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
    }
    }
    return 1.0;
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    Tensor out(Shape{m, n});
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
                ov[i * n + j] += aip * bv[p * n + j];
        }
    if (tape.wants({&a, &b})) {
        tape.record(out, [a, b, out, m, k, n]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                const auto bv = b.values();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                const auto av = a.values();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                            gb[p * n + j] += aip * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

Tensor transpose(Tape& tape, const Tensor& a)
{
    require_rank("transpose", a, 2);
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.at(j, i) = a.at(i, j);
    if (tape.wants({&a})) {
        tape.record(out, [a, out, r, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    ga[i * c + j] += g[j * r + i];
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape)
{
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    Tensor out(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
    if (tape.wants({&a})) {
        tape.record(out, [a, out]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i];
        });
    }
    return out;
}

// ---- elementwise --------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape("add", a, b);
    Tensor out(a.shape());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = a[i] + b[i];
    if (tape.wants({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape("sub", a, b);
    Tensor out(a.shape());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = a[i] - b[i];
    if (tape.wants({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape("mul", a, b);
    Tensor out(a.shape());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = a[i] * b[i];
    if (tape.wants({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * b[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] += g[i] * a[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor)
{
    Tensor out(a.shape());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = a[i] * factor;
    if (tape.wants({&a})) {
        tape.record(out, [a, out, factor]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor sum(Tape& tape, const Tensor& a)
{
    double acc = 0.0;
    for (double v : a.values())
        acc += v;
    Tensor out = Tensor::scalar(acc);
    if (tape.wants({&a})) {
        tape.record(out, [a, out]() mutable {
            if (!out.has_grad())
                return;
            const double g = out.grad()[0];
            for (double& ga : a.grad_buffer())
                ga += g;
        });
    }
    return out;
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape("dot", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        acc += a[i] * b[i];
    Tensor out = Tensor::scalar(acc);
    if (tape.wants({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            if (!out.has_grad())
                return;
            const double g = out.grad()[0];
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += g * b[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < gb.size(); ++i)
                    gb[i] += g * a[i];
            }
        });
    }
    return out;
}

// ---- normalizations -----------------------------------------------------

Tensor softmax(Tape& tape, const Tensor& v, int axis)
{
    if (!v.defined())
        throw ContractError("softmax: undefined tensor");
    const Lanes lanes = lanes_for("softmax", v, axis);
    Tensor out(v.shape());
    const auto in = v.values();
    auto ov = out.values();
    for (std::size_t l = 0; l < lanes.count; ++l) {
        const std::size_t base = lanes.offset(l);
        double mx = in[base];
        for (std::size_t i = 1; i < lanes.length; ++i)
            mx = std::max(mx, in[base + i * lanes.stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < lanes.length; ++i) {
            const double e = std::exp(in[base + i * lanes.stride] - mx);
            ov[base + i * lanes.stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < lanes.length; ++i)
            ov[base + i * lanes.stride] /= z;
    }
    if (tape.wants({&v})) {
        tape.record(out, [v, out, lanes]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            const auto y = out.values();
            auto gv = v.grad_buffer();
            for (std::size_t l = 0; l < lanes.count; ++l) {
                const std::size_t base = lanes.offset(l);
                double inner = 0.0;
                for (std::size_t i = 0; i < lanes.length; ++i) {
                    const std::size_t p = base + i * lanes.stride;
                    inner += g[p] * y[p];
                }
                for (std::size_t i = 0; i < lanes.length; ++i) {
                    const std::size_t p = base + i * lanes.stride;
                    gv[p] += y[p] * (g[p] - inner);
                }
            }
        });
    }
    return out;
}

Tensor causal_softmax(Tape& tape, const Tensor& scores)
{
    require_rank("causal_softmax", scores, 2);
    const std::size_t n = scores.rows();
    if (scores.cols() != n)
        throw ShapeError("causal_softmax: square scores required, got " +
                         to_string(scores.shape()));
    Tensor out(scores.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double mx = scores.at(i, 0);
        for (std::size_t j = 1; j <= i; ++j)
            mx = std::max(mx, scores.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            const double e = std::exp(scores.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j <= i; ++j)
            out.at(i, j) /= z;
    }
    if (tape.wants({&scores})) {
        tape.record(out, [scores, out, n]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto gs = scores.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j <= i; ++j)
                    inner += g[i * n + j] * out.at(i, j);
                for (std::size_t j = 0; j <= i; ++j)
                    gs[i * n + j] += out.at(i, j) * (g[i * n + j] - inner);
            }
        });
    }
    return out;
}

Tensor activation(Tape& tape, const Tensor& v, Activation kind)
{
    Tensor out(v.shape());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = activate(kind, v[i]);
    if (tape.wants({&v})) {
        tape.record(out, [v, out, kind]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto gv = v.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                gv[i] += g[i] * activate_derivative(kind, v[i]);
        });
    }
    return out;
}

Tensor rms_norm(Tape& tape, const Tensor& x, const Tensor& gain, double eps)
{
    require_rank("rms_norm", x, 2);
    require_rank("rms_norm", gain, 1);
    const std::size_t n = x.rows(), d = x.cols();
    if (gain.dim(0) != d)
        throw ShapeError("rms_norm: gain " + to_string(gain.shape()) + " does not match input " +
                         to_string(x.shape()));
    Tensor out(x.shape());
    std::vector<double> inv_rms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            ss += x.at(i, j) * x.at(i, j);
        inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = x.at(i, j) * inv_rms[i] * gain[j];
    }
    if (tape.wants({&x, &gain})) {
        tape.record(out, [x, gain, out, inv_rms = std::move(inv_rms), n, d]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            if (gain.requires_grad()) {
                auto gg = gain.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        gg[j] += g[i * d + j] * x.at(i, j) * inv_rms[i];
            }
            if (x.requires_grad()) {
                auto gx = x.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    const double r = inv_rms[i];
                    double inner = 0.0;
                    for (std::size_t j = 0; j < d; ++j)
                        inner += g[i * d + j] * gain[j] * x.at(i, j);
                    const double coef = inner * r * r * r / static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                        gx[i * d + j] += g[i * d + j] * gain[j] * r - x.at(i, j) * coef;
                }
            }
        });
    }
    return out;
}

// ---- structural ---------------------------------------------------------

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count)
{
    require_rank("slice_cols", a, 2);
    const std::size_t r = a.rows(), c = a.cols();
    if (begin + count > c)
        throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceed " + to_string(a.shape()));
    Tensor out(Shape{r, count});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j)
            out.at(i, j) = a.at(i, begin + j);
    if (tape.wants({&a})) {
        tape.record(out, [a, out, r, c, begin, count]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    ga[i * c + begin + j] += g[i * count + j];
        });
    }
    return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw ContractError("concat_cols: no parts");
    std::size_t r = 0, c = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        require_rank("concat_cols", parts[p], 2);
        if (p == 0)
            r = parts[p].rows();
        else if (parts[p].rows() != r)
            throw ShapeError("concat_cols: row count mismatch " + to_string(parts[0].shape()) +
                             " vs " + to_string(parts[p].shape()));
        c += parts[p].cols();
    }
    Tensor out(Shape{r, c});
    std::size_t off = 0;
    bool track = false;
    for (const auto& part : parts) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < part.cols(); ++j)
                out.at(i, off + j) = part.at(i, j);
        off += part.cols();
        track = track || tape.wants({&part});
    }
    if (track) {
        tape.record(out, [parts, out, r, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            std::size_t off = 0;
            for (auto& part : parts) {
                const std::size_t pc = part.cols();
                if (part.requires_grad()) {
                    auto gp = part.grad_buffer();
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < pc; ++j)
                            gp[i * pc + j] += g[i * c + off + j];
                }
                off += pc;
            }
        });
    }
    return out;
}

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw ContractError("concat_rows: no parts");
    std::size_t r = 0, c = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        require_rank("concat_rows", parts[p], 2);
        if (p == 0)
            c = parts[p].cols();
        else if (parts[p].cols() != c)
            throw ShapeError("concat_rows: column count mismatch " + to_string(parts[0].shape()) +
                             " vs " + to_string(parts[p].shape()));
        r += parts[p].rows();
    }
    Tensor out(Shape{r, c});
    std::size_t off = 0;
    bool track = false;
    for (const auto& part : parts) {
        std::copy(part.values().begin(), part.values().end(), out.values().begin() + off * c);
        off += part.rows();
        track = track || tape.wants({&part});
    }
    if (track) {
        tape.record(out, [parts, out, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            std::size_t off = 0;
            for (auto& part : parts) {
                if (part.requires_grad()) {
                    auto gp = part.grad_buffer();
                    for (std::size_t i = 0; i < gp.size(); ++i)
                        gp[i] += g[off * c + i];
                }
                off += part.rows();
            }
        });
    }
    return out;
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> rows)
{
    require_rank("gather_rows", table, 2);
    const std::size_t c = table.cols();
    for (std::size_t r : rows)
        if (r >= table.rows())
            throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                             to_string(table.shape()));
    Tensor out(Shape{rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.at(i, j) = table.at(rows[i], j);
    if (tape.wants({&table})) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        tape.record(out, [table, out, idx = std::move(idx), c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto gt = table.grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gt[idx[i] * c + j] += g[i * c + j];
        });
    }
    return out;
}

Tensor scatter_rows(Tape& tape, const Tensor& src, std::span<const std::size_t> rows,
                    std::size_t total_rows)
{
    require_rank("scatter_rows", src, 2);
    if (rows.size() != src.rows())
        throw ShapeError("scatter_rows: " + std::to_string(rows.size()) + " indices for " +
                         to_string(src.shape()));
    const std::size_t c = src.cols();
    for (std::size_t r : rows)
        if (r >= total_rows)
            throw ShapeError("scatter_rows: row " + std::to_string(r) + " out of range " +
                             std::to_string(total_rows));
    Tensor out(Shape{total_rows, c});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.at(rows[i], j) += src.at(i, j);
    if (tape.wants({&src})) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        tape.record(out, [src, out, idx = std::move(idx), c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto gs = src.grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gs[i * c + j] += g[idx[i] * c + j];
        });
    }
    return out;
}

Tensor pick_column(Tape& tape, const Tensor& m, std::span<const std::size_t> rows, std::size_t col)
{
    require_rank("pick_column", m, 2);
    if (col >= m.cols())
        throw ShapeError("pick_column: column " + std::to_string(col) + " out of range for " +
                         to_string(m.shape()));
    const std::size_t c = m.cols();
    Tensor out(Shape{rows.size()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m.rows())
            throw ShapeError("pick_column: row " + std::to_string(rows[i]) + " out of range for " +
                             to_string(m.shape()));
        out[i] = m.at(rows[i], col);
    }
    if (tape.wants({&m})) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        tape.record(out, [m, out, idx = std::move(idx), col, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto gm = m.grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                gm[idx[i] * c + col] += g[i];
        });
    }
    return out;
}

Tensor scale_rows(Tape& tape, const Tensor& a, const Tensor& w)
{
    require_rank("scale_rows", a, 2);
    require_rank("scale_rows", w, 1);
    const std::size_t r = a.rows(), c = a.cols();
    if (w.dim(0) != r)
        throw ShapeError("scale_rows: weights " + to_string(w.shape()) + " for " +
                         to_string(a.shape()));
    Tensor out(a.shape());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.at(i, j) = a.at(i, j) * w[i];
    if (tape.wants({&a, &w})) {
        tape.record(out, [a, w, out, r, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        ga[i * c + j] += g[i * c + j] * w[i];
            }
            if (w.requires_grad()) {
                auto gw = w.grad_buffer();
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j)
                        acc += g[i * c + j] * a.at(i, j);
                    gw[i] += acc;
                }
            }
        });
    }
    return out;
}

Tensor row_sums(Tape& tape, const Tensor& a)
{
    require_rank("row_sums", a, 2);
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(Shape{r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[i] += a.at(i, j);
    if (tape.wants({&a})) {
        tape.record(out, [a, out, r, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    ga[i * c + j] += g[i];
        });
    }
    return out;
}

Tensor mean_rows(Tape& tape, const Tensor& a)
{
    require_rank("mean_rows", a, 2);
    const std::size_t r = a.rows(), c = a.cols();
    if (r == 0)
        throw ShapeError("mean_rows: no rows in " + to_string(a.shape()));
    Tensor out(Shape{c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[j] += a.at(i, j);
    for (std::size_t j = 0; j < c; ++j)
        out[j] /= static_cast<double>(r);
    if (tape.wants({&a})) {
        tape.record(out, [a, out, r, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            const double inv = 1.0 / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    ga[i * c + j] += g[j] * inv;
        });
    }
    return out;
}

Tensor normalize_rows(Tape& tape, const Tensor& a)
{
    require_rank("normalize_rows", a, 2);
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> sums(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            sums[i] += a.at(i, j);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < r; ++i) {
        if (!(sums[i] != 0.0))
            throw NumericError("normalize_rows: row " + std::to_string(i) + " sums to zero");
        for (std::size_t j = 0; j < c; ++j)
            out.at(i, j) = a.at(i, j) / sums[i];
    }
    if (tape.wants({&a})) {
        tape.record(out, [a, out, sums = std::move(sums), r, c]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    inner += g[i * c + j] * out.at(i, j);
                for (std::size_t j = 0; j < c; ++j)
                    ga[i * c + j] += (g[i * c + j] - inner) / sums[i];
            }
        });
    }
    return out;
}

std::vector<std::size_t> top_k_indices(std::span<const double> weights, std::size_t k)
{
    if (k < 1 || k > weights.size())
        throw ContractError("top_k: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(weights.size()) + "]");
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return weights[l] > weights[r]; });
    order.resize(k);
    return order;
}

Tensor top_k_select(Tape& tape, const Tensor& weights, std::size_t k)
{
    if (!weights.defined() || weights.rank() < 1 || weights.rank() > 2)
        throw ShapeError("top_k_select: rank 1 or 2 required");
    const std::size_t r = weights.rank() == 1 ? 1 : weights.rows();
    const std::size_t c = weights.rank() == 1 ? weights.dim(0) : weights.cols();
    std::vector<char> mask(r * c, 0);
    for (std::size_t i = 0; i < r; ++i) {
        const auto row = weights.values().subspan(i * c, c);
        for (std::size_t j : top_k_indices(row, k))
            mask[i * c + j] = 1;
    }
    Tensor out(weights.shape());
    for (std::size_t p = 0; p < mask.size(); ++p)
        out[p] = mask[p] ? weights[p] : 0.0;
    if (tape.wants({&weights})) {
        tape.record(out, [weights, out, mask = std::move(mask)]() mutable {
            if (!out.has_grad())
                return;
            const auto g = out.grad();
            auto gw = weights.grad_buffer();
            for (std::size_t p = 0; p < mask.size(); ++p)
                if (mask[p])
                    gw[p] += g[p];
        });
    }
    return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets,
                     const std::vector<bool>& supervised)
{
    require_rank("cross_entropy", logits, 2);
    const std::size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t || supervised.size() != t)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(supervised.size()) + " mask entries for logits " +
                         to_string(logits.shape()));
    std::size_t count = 0;
    for (std::size_t i = 0; i < t; ++i) {
        if (!supervised[i])
            continue;
        if (targets[i] >= v)
            throw ContractError("cross_entropy: target " + std::to_string(targets[i]) +
                                " outside vocabulary of " + std::to_string(v));
        ++count;
    }
    if (count == 0)
        throw ContractError("cross_entropy: no supervised positions");
    Tensor probs(Shape{t, v});
    double total = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        if (!supervised[i])
            continue;
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < v; ++j)
            mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double e = std::exp(logits.at(i, j) - mx);
            probs.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < v; ++j)
            probs.at(i, j) /= z;
        total += -(logits.at(i, targets[i]) - mx - std::log(z));
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(count));
    if (tape.wants({&logits})) {
        std::vector<std::size_t> tg(targets.begin(), targets.end());
        tape.record(out, [logits, out, probs, tg = std::move(tg), supervised, count, t,
                          v]() mutable {
            if (!out.has_grad())
                return;
            const double g = out.grad()[0] / static_cast<double>(count);
            auto gl = logits.grad_buffer();
            for (std::size_t i = 0; i < t; ++i) {
                if (!supervised[i])
                    continue;
                for (std::size_t j = 0; j < v; ++j)
                    gl[i * v + j] += g * (probs.at(i, j) - (j == tg[i] ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

// ---- gradient oracle ----------------------------------------------------

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h)
{
    if (!(h > 0.0))
        throw ContractError("finite_difference_gradient: step must be positive");
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double fp = f(x);
        x[i] = saved - h;
        const double fm = f(x);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_difference_gradient: non-finite value at coordinate " +
                               std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                               double floor)
{
    if (analytic.size() != numeric.size())
        throw ShapeError("gradient_relative_error: size mismatch");
    double diff = 0.0, scale_ = floor;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale_ = std::max({scale_, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale_;
}

} // namespace moce
