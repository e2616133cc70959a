#pragma once

// Reverse-mode automatic differentiation over dense multi-dimensional
// arrays. One Tape owns all nodes of a single forward computation; ops
// append nodes and (when any input is tracked) a backward closure. A
// backward pass walks the closures in reverse recording order, which is a
// valid topological order by construction.
//
// Gradients accumulate into tracked leaves across repeated backward()
// calls; interior gradients are reset at the start of each pass.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "featmap/common.hpp"

namespace featmap {

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const { return tape->shape(id); }
    const std::vector<T>& val() const { return tape->val(id); }
};

template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Shape shape, std::vector<T> values, bool tracked) {
        if (int64_t(values.size()) != numel(shape))
            throw ShapeError("leaf: value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        return {this, emit(std::move(shape), std::move(values), tracked, true)};
    }

    Var<T> constant(Shape shape, std::vector<T> values) {
        return leaf(std::move(shape), std::move(values), false);
    }

    Var<T> scalar(T v) { return constant({1}, {v}); }

    // Detached copy: same values, no backward edge into the source graph.
    Var<T> detach(Var<T> a) { return constant(shape(a.id), val(a.id)); }

    void backward(Var<T> root) {
        if (numel(shape(root.id)) != 1)
            throw ShapeError("backward: root must be scalar, got " + shape_str(shape(root.id)));
        for (Node& n : nodes_) {
            if (n.tracked && !n.is_leaf) std::fill(n.grad.begin(), n.grad.end(), T(0));
        }
        if (!nodes_[size_t(root.id)].tracked) return;  // nothing reaches a tracked leaf
        Node& r = nodes_[size_t(root.id)];
        r.grad[0] += T(1);
        for (size_t i = steps_.size(); i-- > 0;) steps_[i]();
    }

    const Shape& shape(int id) const { return nodes_[size_t(id)].shape; }
    const std::vector<T>& val(int id) const { return nodes_[size_t(id)].values; }
    std::vector<T>& mutable_val(int id) { return nodes_[size_t(id)].values; }
    bool tracked(int id) const { return nodes_[size_t(id)].tracked; }

    const std::vector<T>& grad(int id) const {
        const Node& n = nodes_[size_t(id)];
        if (!n.tracked) throw Error("grad: node is not tracked");
        return n.grad;
    }

    // --- used by op implementations ---

    int emit(Shape shape, std::vector<T> values, bool tracked, bool is_leaf = false) {
        Node n;
        n.shape = std::move(shape);
        n.values = std::move(values);
        n.tracked = tracked;
        n.is_leaf = is_leaf;
        if (tracked) n.grad.assign(n.values.size(), T(0));
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    void record(std::function<void()> back) { steps_.push_back(std::move(back)); }

    T* grad_ptr(int id) {
        Node& n = nodes_[size_t(id)];
        return n.tracked ? n.grad.data() : nullptr;
    }
    const T* val_ptr(int id) const { return nodes_[size_t(id)].values.data(); }

    size_t node_count() const { return nodes_.size(); }
    size_t step_count() const { return steps_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool tracked = false;
        bool is_leaf = false;
    };

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> steps_;
};

namespace detail {

template <typename T>
inline void check_same_tape(Var<T> a, Var<T> b, const char* op) {
    if (a.tape != b.tape) throw Error(std::string(op) + ": operands on different tapes");
}

template <typename T>
inline void check_same_shape(Var<T> a, Var<T> b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ------------------------------------------------------------ elementwise

// add: identical shapes, or b broadcast per-row over [N,F]+[F] and
// per-channel over [N,C,H,W]+[C].
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "add");
    Tape<T>& t = *a.tape;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool same = sa == sb;
    const bool row_bc = sa.size() == 2 && sb.size() == 1 && sb[0] == sa[1];
    const bool chan_bc = sa.size() == 4 && sb.size() == 1 && sb[0] == sa[1];
    if (!same && !row_bc && !chan_bc)
        throw ShapeError("add: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));

    const std::vector<T>& va = t.val(a.id);
    const std::vector<T>& vb = t.val(b.id);
    std::vector<T> out(va.size());
    if (same) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    } else if (row_bc) {
        const int n = sa[0], f = sa[1];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < f; ++j) out[size_t(i) * f + j] = va[size_t(i) * f + j] + vb[size_t(j)];
    } else {
        const int n = sa[0], c = sa[1];
        const int64_t hw = int64_t(sa[2]) * sa[3];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                const int64_t base = (int64_t(i) * c + j) * hw;
                const T bj = vb[size_t(j)];
                for (int64_t k = 0; k < hw; ++k) out[size_t(base + k)] = va[size_t(base + k)] + bj;
            }
    }

    const bool tracked = t.tracked(a.id) || t.tracked(b.id);
    const Shape shp = sa;  // copy: emit below may reallocate node storage
    Var<T> o{&t, t.emit(shp, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, ib = b.id, io = o.id;
        t.record([tp, ia, ib, io, shp, same, row_bc]() {
            const T* g = tp->grad_ptr(io);
            const int64_t n = numel(shp);
            if (T* ga = tp->grad_ptr(ia))
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            if (T* gb = tp->grad_ptr(ib)) {
                if (same) {
                    for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
                } else if (row_bc) {
                    const int rows = shp[0], f = shp[1];
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < f; ++j) gb[j] += g[size_t(i) * f + j];
                } else {
                    const int rows = shp[0], c = shp[1];
                    const int64_t hw = int64_t(shp[2]) * shp[3];
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < c; ++j) {
                            const int64_t base = (int64_t(i) * c + j) * hw;
                            T acc = 0;
                            for (int64_t k = 0; k < hw; ++k) acc += g[base + k];
                            gb[j] += acc;
                        }
                }
            }
        });
    }
    return o;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "sub");
    detail::check_same_shape(a, b, "sub");
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    const std::vector<T>& vb = t.val(b.id);
    std::vector<T> out(va.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    const bool tracked = t.tracked(a.id) || t.tracked(b.id);
    Var<T> o{&t, t.emit(a.shape(), std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, ib = b.id, io = o.id;
        t.record([tp, ia, ib, io]() {
            const std::vector<T>& g = tp->grad(io);
            if (T* ga = tp->grad_ptr(ia))
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (T* gb = tp->grad_ptr(ib))
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        });
    }
    return o;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "mul");
    detail::check_same_shape(a, b, "mul");
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    const std::vector<T>& vb = t.val(b.id);
    std::vector<T> out(va.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    const bool tracked = t.tracked(a.id) || t.tracked(b.id);
    Var<T> o{&t, t.emit(a.shape(), std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, ib = b.id, io = o.id;
        t.record([tp, ia, ib, io]() {
            const std::vector<T>& g = tp->grad(io);
            const T* pa = tp->val_ptr(ia);
            const T* pb = tp->val_ptr(ib);
            if (T* ga = tp->grad_ptr(ia))
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb[i];
            if (T* gb = tp->grad_ptr(ib))
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa[i];
        });
    }
    return o;
}

template <typename T>
Var<T> scalar_mul(Var<T> a, T c) {
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    std::vector<T> out(va.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * va[i];
    const bool tracked = t.tracked(a.id);
    Var<T> o{&t, t.emit(a.shape(), std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, io = o.id;
        t.record([tp, ia, io, c]() {
            const std::vector<T>& g = tp->grad(io);
            if (T* ga = tp->grad_ptr(ia))
                for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }
    return o;
}

namespace detail {

// Shared skeleton for unary elementwise ops. dfun(x, y) is d(out)/d(in)
// given input value x and output value y.
template <typename T, typename F, typename DF>
Var<T> unary_op(Var<T> a, F fun, DF dfun) {
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    std::vector<T> out(va.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fun(va[i]);
    const bool tracked = t.tracked(a.id);
    Var<T> o{&t, t.emit(a.shape(), std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, io = o.id;
        t.record([tp, ia, io, dfun]() {
            const std::vector<T>& g = tp->grad(io);
            const T* x = tp->val_ptr(ia);
            const T* y = tp->val_ptr(io);
            if (T* ga = tp->grad_ptr(ia))
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfun(x[i], y[i]);
        });
    }
    return o;
}

}  // namespace detail

template <typename T>
Var<T> relu(Var<T> a) {
    return detail::unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope = T(0.2)) {
    return detail::unary_op(
        a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
    return detail::unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> abs_op(Var<T> a) {
    return detail::unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(Var<T> a) {
    return detail::unary_op(
        a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ------------------------------------------------------------- reshaping

template <typename T>
Var<T> reshape(Var<T> a, Shape to) {
    Tape<T>& t = *a.tape;
    if (numel(to) != numel(a.shape()))
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                         shape_str(to));
    const bool tracked = t.tracked(a.id);
    Var<T> o{&t, t.emit(std::move(to), t.val(a.id), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, io = o.id;
        t.record([tp, ia, io]() {
            const std::vector<T>& g = tp->grad(io);
            if (T* ga = tp->grad_ptr(ia))
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return o;
}

// ------------------------------------------------------------ reductions

template <typename T>
Var<T> sum(Var<T> a) {
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    T acc = 0;
    for (T v : va) acc += v;
    const bool tracked = t.tracked(a.id);
    Var<T> o{&t, t.emit({1}, {acc}, tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, io = o.id;
        t.record([tp, ia, io]() {
            const T g = tp->grad(io)[0];
            if (T* ga = tp->grad_ptr(ia)) {
                const size_t n = tp->val(ia).size();
                for (size_t i = 0; i < n; ++i) ga[i] += g;
            }
        });
    }
    return o;
}

template <typename T>
Var<T> mean(Var<T> a) {
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    T acc = 0;
    for (T v : va) acc += v;
    const T inv = T(1) / T(va.size());
    const bool tracked = t.tracked(a.id);
    Var<T> o{&t, t.emit({1}, {acc * inv}, tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, io = o.id;
        t.record([tp, ia, io, inv]() {
            const T g = tp->grad(io)[0] * inv;
            if (T* ga = tp->grad_ptr(ia)) {
                const size_t n = tp->val(ia).size();
                for (size_t i = 0; i < n; ++i) ga[i] += g;
            }
        });
    }
    return o;
}

template <typename T>
Var<T> l2_norm_sq(Var<T> a) {
    Tape<T>& t = *a.tape;
    const std::vector<T>& va = t.val(a.id);
    T acc = 0;
    for (T v : va) acc += v * v;
    const bool tracked = t.tracked(a.id);
    Var<T> o{&t, t.emit({1}, {acc}, tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, io = o.id;
        t.record([tp, ia, io]() {
            const T g = tp->grad(io)[0];
            const T* x = tp->val_ptr(ia);
            if (T* ga = tp->grad_ptr(ia)) {
                const size_t n = tp->val(ia).size();
                for (size_t i = 0; i < n; ++i) ga[i] += g * T(2) * x[i];
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------- matmul

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// [N,K] x [K,M] -> [N,M]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "matmul");
    Tape<T>& t = *a.tape;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    const int n = sa[0], k = sa[1], m = sb[1];
    std::vector<T> out(size_t(n) * m);
    {
        CMapRM<T> A(t.val_ptr(a.id), n, k);
        CMapRM<T> B(t.val_ptr(b.id), k, m);
        MapRM<T> O(out.data(), n, m);
        O.noalias() = A * B;
    }
    const bool tracked = t.tracked(a.id) || t.tracked(b.id);
    Var<T> o{&t, t.emit({n, m}, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ia = a.id, ib = b.id, io = o.id;
        t.record([tp, ia, ib, io, n, k, m]() {
            CMapRM<T> G(tp->grad(io).data(), n, m);
            if (T* ga = tp->grad_ptr(ia)) {
                CMapRM<T> B(tp->val_ptr(ib), k, m);
                MapRM<T>(ga, n, k).noalias() += G * B.transpose();
            }
            if (T* gb = tp->grad_ptr(ib)) {
                CMapRM<T> A(tp->val_ptr(ia), n, k);
                MapRM<T>(gb, k, m).noalias() += A.transpose() * G;
            }
        });
    }
    return o;
}

}  // namespace featmap
