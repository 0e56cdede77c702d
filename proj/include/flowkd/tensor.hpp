#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "flowkd/errors.hpp"
#include "flowkd/mat.hpp"

namespace flowkd {

// Tape-based reverse-mode autodiff over dense tensors.
//
// Design constraints kept deliberately tight: dense data only, no general
// broadcasting (the only sanctioned broadcasts are the explicit row/column/
// channel-vector ops below), single-threaded tape. Ops produce a new node
// holding its parents and a backprop closure; backward() runs the closures
// in reverse topological order and accumulates into .grad until zeroed.
//
// T is the scalar type: double is the reference mode, float is an opt-in
// speed mode (excluded from gradient checking).

template <class T>
class TensorT {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<T> value;
        std::vector<T> grad;
        bool requires_grad = false;
        std::vector<TensorT> parents;
        std::function<void(Node&)> backprop;
    };

    TensorT() = default;

    static TensorT from_data(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        if (n != data.size()) throw std::invalid_argument("tensor: shape does not match data length");
        TensorT t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        if (requires_grad) t.n_->grad.assign(t.n_->value.size(), T(0));
        return t;
    }

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static TensorT full(std::vector<int> shape, T fill, bool requires_grad = false) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return from_data(std::move(shape), std::vector<T>(n, fill), requires_grad);
    }

    static TensorT scalar(T x, bool requires_grad = false) {
        return from_data({1}, {x}, requires_grad);
    }

    static TensorT from_mat(const Mat<T>& m, bool requires_grad = false) {
        return from_data({m.rows, m.cols}, m.v, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return n_->shape; }
    size_t numel() const { return n_->value.size(); }
    const std::vector<T>& value() const { return n_->value; }
    std::vector<T>& value_mut() { return n_->value; }
    const std::vector<T>& grad() const { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
        return n_->value[0];
    }

    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }

    void zero_grad() {
        if (n_ && n_->requires_grad) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    // Constant copy of the current value, disconnected from the tape.
    TensorT detach() const { return from_data(n_->shape, n_->value, false); }

    Mat<T> to_mat() const {
        if (ndim() != 2) throw std::invalid_argument("to_mat: tensor is not 2-d");
        return Mat<T>(dim(0), dim(1), n_->value);
    }

    bool all_finite() const {
        for (T x : n_->value)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    Node* node() const { return n_.get(); }

    // Internal: build an op node.
    static TensorT make_op(std::vector<int> shape, std::vector<T> value,
                           std::vector<TensorT> parents,
                           std::function<void(Node&)> backprop) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p.requires_grad();
        TensorT t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(value);
        t.n_->requires_grad = rg;
        if (rg) {
            t.n_->grad.assign(t.n_->value.size(), T(0));
            t.n_->parents = std::move(parents);
            t.n_->backprop = std::move(backprop);
        }
        return t;
    }

private:
    std::shared_ptr<Node> n_;
};

// ---------------------------------------------------------------------------
// backward

template <class T>
void backward(const TensorT<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: tensor is not on the tape");

    using Node = typename TensorT<T>::Node;
    // Iterative post-order DFS over parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.node(), 0});
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx].node();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior op nodes get a fresh gradient every pass; leaf tensors
    // (parameters) accumulate until explicitly zeroed.
    for (Node* n : order)
        if (n->backprop) std::fill(n->grad.begin(), n->grad.end(), T(0));

    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// helpers

namespace detail {

template <class T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

template <class T>
inline void check_2d(const TensorT<T>& a, const char* op) {
    if (a.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-d tensor");
}

template <class T>
inline void add_into(std::vector<T>& dst, const std::vector<T>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (same shape)

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pb = n.parents[1].node();
        if (pa->requires_grad) detail::add_into(pa->grad, n.grad);
        if (pb->requires_grad) detail::add_into(pb->grad, n.grad);
    });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pb = n.parents[1].node();
        if (pa->requires_grad) detail::add_into(pa->grad, n.grad);
        if (pb->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pb = n.parents[1].node();
        if (pa->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
    });
}

template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pb = n.parents[1].node();
        if (pa->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pb->value[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i)
                pb->grad[i] -= n.grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
    });
}

// ---------------------------------------------------------------------------
// scalar ops

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [](auto& n) {
        detail::add_into(n.parents[0].node()->grad, n.grad);
    });
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [c](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += c * n.grad[i];
    });
}

template <class T>
TensorT<T> neg(const TensorT<T>& a) {
    return mul_scalar(a, T(-1));
}

// a^c with real exponent; caller guarantees a > 0 unless c is a positive integer.
template <class T>
TensorT<T> pow_scalar(const TensorT<T>& a, double c) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(std::pow(static_cast<double>(a.value()[i]), c));
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [c](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * static_cast<T>(c * std::pow(static_cast<double>(pa->value[i]), c - 1.0));
    });
}

// max(a, c); subgradient at a == c is 0 (matches the relu-at-0 convention).
template <class T>
TensorT<T> maximum_scalar(const TensorT<T>& a, T c) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.value()[i], c);
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [c](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (pa->value[i] > c) pa->grad[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// unary ops

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    return maximum_scalar(a, T(0));
}

template <class T>
TensorT<T> log(const TensorT<T>& a) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pa->value[i];
    });
}

template <class T>
TensorT<T> exp(const TensorT<T>& a) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * n.value[i];
    });
}

template <class T>
TensorT<T> sqrt(const TensorT<T>& a) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.value()[i]);
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * T(0.5) / n.value[i];
    });
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    T s = 0;
    for (T x : a.value()) s += x;
    return TensorT<T>::make_op({1}, {s}, {a}, [](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += n.grad[0];
    });
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

// N x M -> {N}: sum over columns of each row.
template <class T>
TensorT<T> row_sums(const TensorT<T>& a) {
    detail::check_2d(a, "row_sums");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(static_cast<size_t>(N), T(0));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j) out[i] += a.value()[static_cast<size_t>(i) * M + j];
    return TensorT<T>::make_op({N}, std::move(out), {a}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < M; ++j) pa->grad[static_cast<size_t>(i) * M + j] += n.grad[i];
    });
}

// N x M -> {M}: sum over rows of each column.
template <class T>
TensorT<T> col_sums(const TensorT<T>& a) {
    detail::check_2d(a, "col_sums");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(static_cast<size_t>(M), T(0));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j) out[j] += a.value()[static_cast<size_t>(i) * M + j];
    return TensorT<T>::make_op({M}, std::move(out), {a}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < M; ++j) pa->grad[static_cast<size_t>(i) * M + j] += n.grad[j];
    });
}

// ---------------------------------------------------------------------------
// sanctioned broadcasts: row vector (length M, varies with column index),
// column vector (length N, varies with row index)

namespace detail {

template <class T>
inline void check_rowvec(const TensorT<T>& a, const TensorT<T>& v, const char* op) {
    check_2d(a, op);
    if (v.ndim() != 1 || v.dim(0) != a.dim(1))
        throw std::invalid_argument(std::string(op) + ": vector length must equal column count");
}

template <class T>
inline void check_colvec(const TensorT<T>& a, const TensorT<T>& v, const char* op) {
    check_2d(a, op);
    if (v.ndim() != 1 || v.dim(0) != a.dim(0))
        throw std::invalid_argument(std::string(op) + ": vector length must equal row count");
}

}  // namespace detail

// out[i,j] = a[i,j] + v[j]
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& a, const TensorT<T>& v) {
    detail::check_rowvec(a, v, "add_rowvec");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(a.numel());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            out[static_cast<size_t>(i) * M + j] = a.value()[static_cast<size_t>(i) * M + j] + v.value()[j];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, v}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pv = n.parents[1].node();
        if (pa->requires_grad) detail::add_into(pa->grad, n.grad);
        if (pv->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) pv->grad[j] += n.grad[static_cast<size_t>(i) * M + j];
    });
}

// out[i,j] = a[i,j] + u[i]
template <class T>
TensorT<T> add_colvec(const TensorT<T>& a, const TensorT<T>& u) {
    detail::check_colvec(a, u, "add_colvec");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(a.numel());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            out[static_cast<size_t>(i) * M + j] = a.value()[static_cast<size_t>(i) * M + j] + u.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, u}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pu = n.parents[1].node();
        if (pa->requires_grad) detail::add_into(pa->grad, n.grad);
        if (pu->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) pu->grad[i] += n.grad[static_cast<size_t>(i) * M + j];
    });
}

// out[i,j] = a[i,j] * v[j]
template <class T>
TensorT<T> mul_rowvec(const TensorT<T>& a, const TensorT<T>& v) {
    detail::check_rowvec(a, v, "mul_rowvec");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(a.numel());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            out[static_cast<size_t>(i) * M + j] = a.value()[static_cast<size_t>(i) * M + j] * v.value()[j];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, v}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pv = n.parents[1].node();
        if (pa->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j)
                    pa->grad[static_cast<size_t>(i) * M + j] += n.grad[static_cast<size_t>(i) * M + j] * pv->value[j];
        if (pv->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j)
                    pv->grad[j] += n.grad[static_cast<size_t>(i) * M + j] * pa->value[static_cast<size_t>(i) * M + j];
    });
}

// out[i,j] = a[i,j] / v[j]
template <class T>
TensorT<T> div_rowvec(const TensorT<T>& a, const TensorT<T>& v) {
    detail::check_rowvec(a, v, "div_rowvec");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(a.numel());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            out[static_cast<size_t>(i) * M + j] = a.value()[static_cast<size_t>(i) * M + j] / v.value()[j];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, v}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pv = n.parents[1].node();
        if (pa->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j)
                    pa->grad[static_cast<size_t>(i) * M + j] += n.grad[static_cast<size_t>(i) * M + j] / pv->value[j];
        if (pv->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const size_t k = static_cast<size_t>(i) * M + j;
                    pv->grad[j] -= n.grad[k] * pa->value[k] / (pv->value[j] * pv->value[j]);
                }
    });
}

// out[i,j] = a[i,j] / u[i]
template <class T>
TensorT<T> div_colvec(const TensorT<T>& a, const TensorT<T>& u) {
    detail::check_colvec(a, u, "div_colvec");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(a.numel());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            out[static_cast<size_t>(i) * M + j] = a.value()[static_cast<size_t>(i) * M + j] / u.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, u}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pu = n.parents[1].node();
        if (pa->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j)
                    pa->grad[static_cast<size_t>(i) * M + j] += n.grad[static_cast<size_t>(i) * M + j] / pu->value[i];
        if (pu->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const size_t k = static_cast<size_t>(i) * M + j;
                    pu->grad[i] -= n.grad[k] * pa->value[k] / (pu->value[i] * pu->value[i]);
                }
    });
}

// out[i,j] = a[i,j] * u[i]
template <class T>
TensorT<T> mul_colvec(const TensorT<T>& a, const TensorT<T>& u) {
    detail::check_colvec(a, u, "mul_colvec");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(a.numel());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            out[static_cast<size_t>(i) * M + j] = a.value()[static_cast<size_t>(i) * M + j] * u.value()[i];
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, u}, [N, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pu = n.parents[1].node();
        if (pa->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j)
                    pa->grad[static_cast<size_t>(i) * M + j] += n.grad[static_cast<size_t>(i) * M + j] * pu->value[i];
        if (pu->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const size_t k = static_cast<size_t>(i) * M + j;
                    pu->grad[i] += n.grad[k] * pa->value[k];
                }
    });
}

// ---------------------------------------------------------------------------
// matmul

// (N x K) @ (K x M) -> N x M
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) throw std::invalid_argument("matmul: inner dimensions differ");
    const int N = a.dim(0), K = a.dim(1), M = b.dim(1);
    std::vector<T> out(static_cast<size_t>(N) * M, T(0));
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) {
            const T aik = a.value()[static_cast<size_t>(i) * K + k];
            for (int j = 0; j < M; ++j)
                out[static_cast<size_t>(i) * M + j] += aik * b.value()[static_cast<size_t>(k) * M + j];
        }
    return TensorT<T>::make_op({N, M}, std::move(out), {a, b}, [N, K, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pb = n.parents[1].node();
        if (pa->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const T g = n.grad[static_cast<size_t>(i) * M + j];
                    for (int k = 0; k < K; ++k)
                        pa->grad[static_cast<size_t>(i) * K + k] += g * pb->value[static_cast<size_t>(k) * M + j];
                }
        if (pb->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int k = 0; k < K; ++k) {
                    const T av = pa->value[static_cast<size_t>(i) * K + k];
                    for (int j = 0; j < M; ++j)
                        pb->grad[static_cast<size_t>(k) * M + j] += av * n.grad[static_cast<size_t>(i) * M + j];
                }
    });
}

// (N x K) @ (M x K)^T -> N x M
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_2d(a, "matmul_nt");
    detail::check_2d(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    const int N = a.dim(0), K = a.dim(1), M = b.dim(0);
    std::vector<T> out(static_cast<size_t>(N) * M, T(0));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j) {
            T s = 0;
            const T* ra = a.value().data() + static_cast<size_t>(i) * K;
            const T* rb = b.value().data() + static_cast<size_t>(j) * K;
            for (int k = 0; k < K; ++k) s += ra[k] * rb[k];
            out[static_cast<size_t>(i) * M + j] = s;
        }
    return TensorT<T>::make_op({N, M}, std::move(out), {a, b}, [N, K, M](auto& n) {
        auto* pa = n.parents[0].node();
        auto* pb = n.parents[1].node();
        if (pa->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const T g = n.grad[static_cast<size_t>(i) * M + j];
                    for (int k = 0; k < K; ++k)
                        pa->grad[static_cast<size_t>(i) * K + k] += g * pb->value[static_cast<size_t>(j) * K + k];
                }
        if (pb->requires_grad)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const T g = n.grad[static_cast<size_t>(i) * M + j];
                    for (int k = 0; k < K; ++k)
                        pb->grad[static_cast<size_t>(j) * K + k] += g * pa->value[static_cast<size_t>(i) * K + k];
                }
    });
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    if (n != a.numel()) throw std::invalid_argument("reshape: element count mismatch");
    return TensorT<T>::make_op(std::move(shape), a.value(), {a}, [](auto& n_) {
        detail::add_into(n_.parents[0].node()->grad, n_.grad);
    });
}

// out[k, :] = a[rows[k], :]
template <class T>
TensorT<T> gather_rows(const TensorT<T>& a, const std::vector<int>& rows) {
    detail::check_2d(a, "gather_rows");
    const int N = a.dim(0), M = a.dim(1);
    std::vector<T> out(rows.size() * static_cast<size_t>(M));
    for (size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= N) throw std::invalid_argument("gather_rows: index out of range");
        std::copy_n(a.value().data() + static_cast<size_t>(rows[k]) * M, M,
                    out.data() + k * static_cast<size_t>(M));
    }
    return TensorT<T>::make_op({static_cast<int>(rows.size()), M}, std::move(out), {a},
                               [rows, M](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t k = 0; k < rows.size(); ++k)
            for (int j = 0; j < M; ++j)
                pa->grad[static_cast<size_t>(rows[k]) * M + j] += n.grad[k * static_cast<size_t>(M) + j];
    });
}

// out[i] = a[i, labels[i]]
template <class T>
TensorT<T> pick_class(const TensorT<T>& a, const std::vector<int>& labels) {
    detail::check_2d(a, "pick_class");
    const int N = a.dim(0), C = a.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw std::invalid_argument("pick_class: label count must equal row count");
    std::vector<T> out(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
        if (labels[i] < 0 || labels[i] >= C) throw std::invalid_argument("pick_class: label out of range");
        out[i] = a.value()[static_cast<size_t>(i) * C + labels[i]];
    }
    return TensorT<T>::make_op({N}, std::move(out), {a}, [labels, C](auto& n) {
        auto* pa = n.parents[0].node();
        for (size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i * C + labels[i]] += n.grad[i];
    });
}

}  // namespace flowkd
