// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tensor is a shared handle to a graph node holding its value, an optional
// gradient and the closure that propagates that gradient to its parents.
// Every op checks its forward result for NaN/Inf and throws NumericError
// immediately; backward() checks each gradient before propagating it.
//
// Instantiated for float (training) and double (gradient checks).

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace chirploc::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) {
            grad.assign(value.size(), T(0));
        }
        return grad;
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<T> values);
    static Tensor parameter(Shape shape, std::vector<T> values);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    /// Writable view of a leaf's storage (optimizer updates, initialization).
    std::span<T> mutable_values() { return node_->value; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient, or an empty span if none has been accumulated.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    const char* op_name() const { return node_->op; }

    T item() const;

    /// Populates gradients of every reachable node that requires them.
    /// Intermediate gradients are reset on each call; leaf gradients accumulate
    /// across calls until zero_grad().
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// While alive, ops on this thread record no graph: results never require
/// gradients. Used for evaluation passes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active();

private:
    bool previous_;
};

/// Batched matrix product. `a` is [..., m, k]; `b` is either [k, n] (shared
/// across the leading axes of `a`) or [..., k, n] with matching leading axes.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

/// Elementwise ops. `b` may equal `a`'s shape or a trailing suffix of it, in
/// which case it is broadcast over the leading axes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);
/// Repeats `a` along a new leading axis of size `count`.
template <typename T> Tensor<T> expand(const Tensor<T>& a, std::size_t count);

template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& a);
/// Exact form x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
/// Normalizes over the last axis, without affine terms.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-12));

/// Full reductions to a scalar of shape {1}.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

}  // namespace chirploc::ad
