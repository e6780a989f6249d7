// SPDX-License-Identifier: Apache-2.0

#include "chirploc/autodiff.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "chirploc/errors.hpp"

namespace chirploc::ad {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_str(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

namespace {

thread_local bool g_no_grad = false;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) {
    g_no_grad = true;
}

NoGradGuard::~NoGradGuard() {
    g_no_grad = previous_;
}

bool NoGradGuard::active() {
    return g_no_grad;
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;
template <typename T>
using MMap = Eigen::Map<MatR<T>>;

template <typename T>
void check_finite(std::span<const T> v, const char* op, const char* what) {
    for (const T x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(fmt::format("non-finite {} in op '{}'", what, op));
        }
    }
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<NodePtr<T>> parents,
                      std::function<void(detail::Node<T>&)> backward_fn) {
    check_finite<T>(value, op, "forward value");
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    node->is_leaf = false;
    if (!g_no_grad) {
        for (const auto& p : parents) {
            node->requires_grad = node->requires_grad || p->requires_grad;
        }
    }
    if (node->requires_grad) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
    if (!t.defined()) {
        throw UsageError(fmt::format("op '{}' received an undefined tensor", op));
    }
}

// Returns the number of times `b` repeats inside `a` when b's shape is a
// trailing suffix of a's shape.
template <typename T>
std::size_t broadcast_outer(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require_defined(a, op);
    require_defined(b, op);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
        throw ShapeError(fmt::format("op '{}': shapes {} and {} are not broadcast-compatible", op,
                                     shape_str(sa), shape_str(sb)));
    }
    return a.numel() / std::max<std::size_t>(b.numel(), 1);
}

template <typename T>
Tensor<T> binary_elementwise(const char* op, const Tensor<T>& a, const Tensor<T>& b, int kind) {
    const std::size_t outer = broadcast_outer(a, b, op);
    const std::size_t inner = b.numel();
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            const T x = av[base + i];
            const T y = bv[i];
            out[base + i] = kind == 0 ? x + y : (kind == 1 ? x - y : x * y);
        }
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_result<T>(op, a.shape(), std::move(out), {pa, pb},
                          [pa, pb, outer, inner, kind](detail::Node<T>& self) {
                              const auto& g = self.grad;
                              if (pa->requires_grad) {
                                  auto& ga = pa->grad_buffer();
                                  if (kind == 2) {
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          for (std::size_t i = 0; i < inner; ++i) {
                                              ga[o * inner + i] += g[o * inner + i] * pb->value[i];
                                          }
                                      }
                                  } else {
                                      for (std::size_t k = 0; k < g.size(); ++k) {
                                          ga[k] += g[k];
                                      }
                                  }
                              }
                              if (pb->requires_grad) {
                                  auto& gb = pb->grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                      for (std::size_t i = 0; i < inner; ++i) {
                                          const T gi = g[o * inner + i];
                                          if (kind == 0) {
                                              gb[i] += gi;
                                          } else if (kind == 1) {
                                              gb[i] -= gi;
                                          } else {
                                              gb[i] += gi * pa->value[o * inner + i];
                                          }
                                      }
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> unary_elementwise(const char* op, const Tensor<T>& a, T (*fwd)(T),
                            T (*deriv)(T x, T y)) {
    require_defined(a, op);
    const auto av = a.values();
    std::vector<T> out(av.size());
    std::transform(av.begin(), av.end(), out.begin(), fwd);
    auto pa = a.node();
    return make_result<T>(op, a.shape(), std::move(out), {pa}, [pa, deriv](detail::Node<T>& self) {
        auto& ga = pa->grad_buffer();
        for (std::size_t k = 0; k < ga.size(); ++k) {
            ga[k] += self.grad[k] * deriv(pa->value[k], self.value[k]);
        }
    });
}

template <typename T>
T gelu_fwd(T x) {
    return x * T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}
template <typename T>
T gelu_deriv(T x, T /*y*/) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    return cdf + x * pdf;
}
template <typename T>
T relu_fwd(T x) {
    return x > T(0) ? x : T(0);
}
template <typename T>
T relu_deriv(T x, T /*y*/) {
    return x > T(0) ? T(1) : T(0);
}
template <typename T>
T tanh_fwd(T x) {
    return std::tanh(x);
}
template <typename T>
T tanh_deriv(T /*x*/, T y) {
    return T(1) - y * y;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
    if (ad::numel(shape) != values.size()) {
        throw ShapeError(fmt::format("constant: shape {} needs {} values, got {}", shape_str(shape),
                                     ad::numel(shape), values.size()));
    }
    check_finite<T>(values, "constant", "value");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = ad::numel(shape);
    Tensor t = constant(std::move(shape), std::vector<T>(n, value));
    t.node_->requires_grad = requires_grad;
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return constant({1}, {value});
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw UsageError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
    }
    return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() const {
    if (!defined() || numel() != 1) {
        throw UsageError(fmt::format("backward() requires a scalar loss, got shape {}",
                                     defined() ? shape_str(shape()) : "undefined"));
    }
    if (!node_->requires_grad) {
        throw UsageError("backward() on a tensor that does not require gradients");
    }

    // Iterative post-order DFS; `order` ends up with parents before children.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (!n->is_leaf) {
            n->grad.clear();
        }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf || n->grad.empty() || !n->backward_fn) {
            continue;
        }
        check_finite<T>(n->grad, n->op, "gradient");
        n->backward_fn(*n);
    }
    for (Node* n : order) {
        if (n->is_leaf && !n->grad.empty()) {
            check_finite<T>(n->grad, "leaf", "gradient");
        }
    }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) {
        throw ShapeError(fmt::format("matmul needs rank >= 2 operands, got {} and {}",
                                     shape_str(sa), shape_str(sb)));
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa.back();
    const std::size_t kb = sb[sb.size() - 2];
    const std::size_t n = sb.back();
    const bool shared = sb.size() == 2;
    const bool batched_ok =
        sb.size() == sa.size() && std::equal(sa.begin(), sa.end() - 2, sb.begin());
    if (k != kb || (!shared && !batched_ok)) {
        throw ShapeError(
            fmt::format("matmul shape mismatch: {} x {}", shape_str(sa), shape_str(sb)));
    }
    const std::size_t batch = a.numel() / (m * k);
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);

    std::vector<T> out(batch * m * n);
    if (shared) {
        MMap<T>(out.data(), batch * m, n).noalias() =
            CMap<T>(a.values().data(), batch * m, k) * CMap<T>(b.values().data(), k, n);
    } else {
        for (std::size_t i = 0; i < batch; ++i) {
            MMap<T>(out.data() + i * m * n, m, n).noalias() =
                CMap<T>(a.values().data() + i * m * k, m, k) *
                CMap<T>(b.values().data() + i * k * n, k, n);
        }
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_result<T>(
        "matmul", std::move(out_shape), std::move(out), {pa, pb},
        [pa, pb, batch, m, k, n, shared](detail::Node<T>& self) {
            const T* g = self.grad.data();
            if (shared) {
                const std::size_t rows = batch * m;
                if (pa->requires_grad) {
                    MMap<T>(pa->grad_buffer().data(), rows, k).noalias() +=
                        CMap<T>(g, rows, n) * CMap<T>(pb->value.data(), k, n).transpose();
                }
                if (pb->requires_grad) {
                    MMap<T>(pb->grad_buffer().data(), k, n).noalias() +=
                        CMap<T>(pa->value.data(), rows, k).transpose() * CMap<T>(g, rows, n);
                }
                return;
            }
            for (std::size_t i = 0; i < batch; ++i) {
                const T* gi = g + i * m * n;
                if (pa->requires_grad) {
                    MMap<T>(pa->grad_buffer().data() + i * m * k, m, k).noalias() +=
                        CMap<T>(gi, m, n) * CMap<T>(pb->value.data() + i * k * n, k, n).transpose();
                }
                if (pb->requires_grad) {
                    MMap<T>(pb->grad_buffer().data() + i * k * n, k, n).noalias() +=
                        CMap<T>(pa->value.data() + i * m * k, m, k).transpose() * CMap<T>(gi, m, n);
                }
            }
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_defined(a, "transpose");
    const Shape& sa = a.shape();
    if (sa.size() < 2) {
        throw ShapeError(fmt::format("transpose needs rank >= 2, got {}", shape_str(sa)));
    }
    const std::size_t r = sa[sa.size() - 2];
    const std::size_t c = sa.back();
    const std::size_t batch = a.numel() / std::max<std::size_t>(r * c, 1);
    Shape out_shape = sa;
    std::swap(out_shape[sa.size() - 2], out_shape[sa.size() - 1]);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < batch; ++i) {
        MMap<T>(out.data() + i * r * c, c, r) = CMap<T>(a.values().data() + i * r * c, r, c).transpose();
    }
    auto pa = a.node();
    return make_result<T>("transpose", std::move(out_shape), std::move(out), {pa},
                          [pa, batch, r, c](detail::Node<T>& self) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t i = 0; i < batch; ++i) {
                                  MMap<T>(ga.data() + i * r * c, r, c) +=
                                      CMap<T>(self.grad.data() + i * r * c, c, r).transpose();
                              }
                          });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise<T>("add", a, b, 0);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise<T>("sub", a, b, 1);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise<T>("mul", a, b, 2);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    require_defined(a, "scale");
    std::vector<T> out(a.values().begin(), a.values().end());
    for (T& v : out) {
        v *= factor;
    }
    auto pa = a.node();
    return make_result<T>("scale", a.shape(), std::move(out), {pa},
                          [pa, factor](detail::Node<T>& self) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t k = 0; k < ga.size(); ++k) {
                                  ga[k] += factor * self.grad[k];
                              }
                          });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require_defined(a, "reshape");
    if (numel(shape) != a.numel()) {
        throw ShapeError(fmt::format("reshape {} -> {} changes the element count",
                                     shape_str(a.shape()), shape_str(shape)));
    }
    std::vector<T> out(a.values().begin(), a.values().end());
    auto pa = a.node();
    return make_result<T>("reshape", std::move(shape), std::move(out), {pa},
                          [pa](detail::Node<T>& self) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t k = 0; k < ga.size(); ++k) {
                                  ga[k] += self.grad[k];
                              }
                          });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw UsageError("concat of zero tensors");
    }
    for (const auto& p : parts) {
        require_defined(p, "concat");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw ShapeError(fmt::format("concat axis {} out of range for {}", axis, shape_str(first)));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            throw ShapeError(fmt::format("concat along axis {}: {} vs {}", axis, shape_str(first),
                                         shape_str(s)));
        }
        out_shape[axis] += s[axis];
    }
    const AxisSplit outs = split_axis(out_shape, axis);
    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> offsets;
    std::vector<NodePtr<T>> nodes;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t block = p.shape()[axis] * outs.inner;
        for (std::size_t o = 0; o < outs.outer; ++o) {
            std::copy_n(p.values().data() + o * block, block,
                        out.data() + o * outs.extent * outs.inner + offset);
        }
        offsets.push_back(offset);
        nodes.push_back(p.node());
        offset += block;
    }
    auto parents = nodes;
    return make_result<T>(
        "concat", std::move(out_shape), std::move(out), std::move(parents),
        [nodes, offsets, outs, axis](detail::Node<T>& self) {
            for (std::size_t j = 0; j < nodes.size(); ++j) {
                const auto& p = nodes[j];
                if (!p->requires_grad) {
                    continue;
                }
                auto& gp = p->grad_buffer();
                const std::size_t block = p->shape[axis] * outs.inner;
                for (std::size_t o = 0; o < outs.outer; ++o) {
                    const T* src = self.grad.data() + o * outs.extent * outs.inner + offsets[j];
                    T* dst = gp.data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    return concat(parts, 0);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
    require_defined(a, "slice");
    const Shape& sa = a.shape();
    if (axis >= sa.size() || start + length > sa[axis] || length == 0) {
        throw ShapeError(fmt::format("slice [{}, {}) on axis {} of {} is out of range", start,
                                     start + length, axis, shape_str(sa)));
    }
    const AxisSplit s = split_axis(sa, axis);
    Shape out_shape = sa;
    out_shape[axis] = length;
    const std::size_t block = length * s.inner;
    std::vector<T> out(s.outer * block);
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(a.values().data() + (o * s.extent + start) * s.inner, block,
                    out.data() + o * block);
    }
    auto pa = a.node();
    return make_result<T>("slice", std::move(out_shape), std::move(out), {pa},
                          [pa, s, start, block](detail::Node<T>& self) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                  T* dst = ga.data() + (o * s.extent + start) * s.inner;
                                  const T* src = self.grad.data() + o * block;
                                  for (std::size_t i = 0; i < block; ++i) {
                                      dst[i] += src[i];
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& a, std::size_t count) {
    require_defined(a, "expand");
    if (count == 0) {
        throw ShapeError("expand to zero copies");
    }
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
    const std::size_t n = a.numel();
    std::vector<T> out(count * n);
    for (std::size_t c = 0; c < count; ++c) {
        std::copy_n(a.values().data(), n, out.data() + c * n);
    }
    auto pa = a.node();
    return make_result<T>("expand", std::move(out_shape), std::move(out), {pa},
                          [pa, count, n](detail::Node<T>& self) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t c = 0; c < count; ++c) {
                                  for (std::size_t i = 0; i < n; ++i) {
                                      ga[i] += self.grad[c * n + i];
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    require_defined(a, "softmax");
    if (a.rank() == 0 || a.shape().back() == 0) {
        throw ShapeError(fmt::format("softmax over empty axis: {}", shape_str(a.shape())));
    }
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    std::vector<T> out(a.numel());
    const auto av = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data() + r * cols;
        T* y = out.data() + r * cols;
        const T mx = *std::max_element(x, x + cols);
        T total = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] /= total;
        }
    }
    auto pa = a.node();
    return make_result<T>("softmax", a.shape(), std::move(out), {pa},
                          [pa, rows, cols](detail::Node<T>& self) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* y = self.value.data() + r * cols;
                                  const T* g = self.grad.data() + r * cols;
                                  T dot = T(0);
                                  for (std::size_t c = 0; c < cols; ++c) {
                                      dot += g[c] * y[c];
                                  }
                                  for (std::size_t c = 0; c < cols; ++c) {
                                      ga[r * cols + c] += y[c] * (g[c] - dot);
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    return unary_elementwise<T>("gelu", a, &gelu_fwd<T>, &gelu_deriv<T>);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_elementwise<T>("relu", a, &relu_fwd<T>, &relu_deriv<T>);
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return unary_elementwise<T>("tanh", a, &tanh_fwd<T>, &tanh_deriv<T>);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps) {
    require_defined(a, "layer_norm");
    if (a.rank() == 0 || a.shape().back() == 0) {
        throw ShapeError(fmt::format("layer_norm over empty axis: {}", shape_str(a.shape())));
    }
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    const T inv_n = T(1) / static_cast<T>(cols);
    std::vector<T> out(a.numel());
    std::vector<T> inv_std(rows);
    const auto av = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data() + r * cols;
        T mu = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            mu += x[c];
        }
        mu *= inv_n;
        T var = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            const T d = x[c] - mu;
            var += d * d;
        }
        var *= inv_n;
        const T rs = T(1) / std::sqrt(var + eps);
        inv_std[r] = rs;
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = (x[c] - mu) * rs;
        }
    }
    auto pa = a.node();
    return make_result<T>(
        "layer_norm", a.shape(), std::move(out), {pa},
        [pa, rows, cols, inv_n, inv_std = std::move(inv_std)](detail::Node<T>& self) {
            auto& ga = pa->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * cols;
                const T* g = self.grad.data() + r * cols;
                T mean_g = T(0);
                T mean_gy = T(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    mean_g += g[c];
                    mean_gy += g[c] * y[c];
                }
                mean_g *= inv_n;
                mean_gy *= inv_n;
                for (std::size_t c = 0; c < cols; ++c) {
                    ga[r * cols + c] += inv_std[r] * (g[c] - mean_g - y[c] * mean_gy);
                }
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    require_defined(a, "sum");
    const auto av = a.values();
    const T total = std::accumulate(av.begin(), av.end(), T(0));
    auto pa = a.node();
    return make_result<T>("sum", {1}, {total}, {pa}, [pa](detail::Node<T>& self) {
        auto& ga = pa->grad_buffer();
        for (T& v : ga) {
            v += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    require_defined(a, "mean");
    if (a.numel() == 0) {
        throw ShapeError("mean of an empty tensor");
    }
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

#define CHIRPLOC_INSTANTIATE(T)                                                        \
    template class Tensor<T>;                                                          \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> transpose(const Tensor<T>&);                                    \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> scale(const Tensor<T>&, T);                                     \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                               \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);             \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                     \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
    template Tensor<T> expand(const Tensor<T>&, std::size_t);                          \
    template Tensor<T> softmax_lastdim(const Tensor<T>&);                              \
    template Tensor<T> gelu(const Tensor<T>&);                                         \
    template Tensor<T> relu(const Tensor<T>&);                                         \
    template Tensor<T> tanh(const Tensor<T>&);                                         \
    template Tensor<T> layer_norm(const Tensor<T>&, T);                                \
    template Tensor<T> sum(const Tensor<T>&);                                          \
    template Tensor<T> mean(const Tensor<T>&);

CHIRPLOC_INSTANTIATE(float)
CHIRPLOC_INSTANTIATE(double)

#undef CHIRPLOC_INSTANTIATE

}  // namespace chirploc::ad
