// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copying it aliases the same storage, which is
// what lets a parameter appear in a model, an optimizer and a recorded
// operation at the same time. Use clone() for an independent copy.
//
// Operations are free functions taking the Tape they record onto. An
// operation is recorded only when the tape is recording and at least one
// input requires a gradient; everything else is plain evaluation.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace moce {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until a gradient is accumulated
    bool requires_grad = false;
};
} // namespace detail

class Tensor {
public:
    Tensor() = default;
    /// Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return impl_ ? impl_->data.size() : 0; }
    std::size_t dim(std::size_t axis) const;
    /// Rows and columns of a rank-2 tensor.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return impl_->data; }
    std::span<double> values() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double& operator[](std::size_t i) { return impl_->data[i]; }
    double at(std::size_t r, std::size_t c) const;
    double& at(std::size_t r, std::size_t c);
    /// Value of a single-element tensor.
    double item() const;

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
    /// Accumulated gradient; all zeros when none has been accumulated.
    std::vector<double> grad_values() const;
    std::span<const double> grad() const { return impl_->grad; }
    /// Mutable gradient buffer, allocated (zeroed) on first use.
    std::span<double> grad_buffer() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Deep copy of values and flag; gradient not copied.
    Tensor clone() const;
    /// Same values, detached from any gradient tracking.
    Tensor detached() const;
    bool shares_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations for one forward pass.
/// Single-threaded; distinct tapes share no mutable state.
class Tape {
public:
    enum class Mode { kRecord, kInference };

    explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return mode_ == Mode::kRecord && !consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// True when an op over `inputs` must be recorded.
    bool wants(std::initializer_list<const Tensor*> inputs) const;
    /// Register `output` as produced from tracked inputs; `rule` reads the
    /// output gradient and accumulates into the inputs.
    void record(Tensor& output, std::function<void()> rule);

    /// Seeds d(loss)/d(loss) = 1 and replays rules in reverse order. Every
    /// requires_grad tensor reachable from the loss receives its gradient,
    /// accumulated onto whatever it already holds. A tape can be replayed once.
    void backward(const Tensor& loss);

private:
    Mode mode_;
    bool consumed_ = false;
    std::vector<std::function<void()>> nodes_;
};

enum class Activation { kGelu, kRelu, kSilu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation kind);

/// Scalar activation value and derivative, shared by the tensor op and tests.
double activate(Activation kind, double x);
double activate_derivative(Activation kind, double x);

// ---- operations ---------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
/// Same values under a new shape with the same element count.
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor sum(Tape& tape, const Tensor& a);
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);

/// Softmax along `axis` (negative counts from the back) of a rank-1 or rank-2
/// tensor, computed with max subtraction.
Tensor softmax(Tape& tape, const Tensor& v, int axis = -1);
/// Row softmax of a square score matrix where row i only sees columns <= i.
Tensor causal_softmax(Tape& tape, const Tensor& scores);
Tensor activation(Tape& tape, const Tensor& v, Activation kind);
/// x[i, :] / rms(x[i, :]) * gain.
Tensor rms_norm(Tape& tape, const Tensor& x, const Tensor& gain, double eps = 1e-6);

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);
/// Rows of `table` at `rows`, in order; repeated indices allowed.
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> rows);
/// [total_rows x cols] of zeros with src row j added into row rows[j].
Tensor scatter_rows(Tape& tape, const Tensor& src, std::span<const std::size_t> rows,
                    std::size_t total_rows);
/// Vector of m[rows[j], col].
Tensor pick_column(Tape& tape, const Tensor& m, std::span<const std::size_t> rows, std::size_t col);
/// Row j of `a` multiplied by w[j].
Tensor scale_rows(Tape& tape, const Tensor& a, const Tensor& w);
/// Per-row sums of a rank-2 tensor.
Tensor row_sums(Tape& tape, const Tensor& a);
/// Column means of a rank-2 tensor (mean over rows).
Tensor mean_rows(Tape& tape, const Tensor& a);
/// Each row divided by its sum.
Tensor normalize_rows(Tape& tape, const Tensor& a);

/// Keeps the k largest entries (per row for rank 2) at their original
/// values and zeroes the rest; ties go to the lower index. The selection is
/// a constant mask during backward.
Tensor top_k_select(Tape& tape, const Tensor& weights, std::size_t k);
/// Indices chosen by top_k_select, in descending weight order.
std::vector<std::size_t> top_k_indices(std::span<const double> weights, std::size_t k);

/// Mean of -log softmax(logits[t])[targets[t]] over positions with
/// supervised[t] set.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets,
                     const std::vector<bool>& supervised);

// ---- gradient oracle ----------------------------------------------------

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h. `x` is perturbed
/// in place and restored bit-exactly, so `f` may read it through any alias.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                  double h = 1e-5);

/// max |a - n| / max(max |a|, max |n|, floor).
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                               double floor = 1e-8);

} // namespace moce
