#pragma once

// Test-only finite-difference oracle. Re-evaluates a scalar-valued forward
// function from scratch around perturbed inputs; never reuses the tape or
// gradients under test.

#include <functional>
#include <vector>

#include "featmap/ops.hpp"

namespace gradcheck {

using featmap::Shape;
using featmap::Tape;
using featmap::Var;

template <typename T>
using ScalarFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

template <typename T>
T eval_scalar(const ScalarFn<T>& fn, const std::vector<Shape>& shapes,
              const std::vector<std::vector<T>>& values) {
    Tape<T> t;
    std::vector<Var<T>> leaves;
    leaves.reserve(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(t.leaf(shapes[i], values[i], false));
    Var<T> root = fn(t, leaves);
    if (featmap::numel(root.shape()) != 1) throw featmap::ShapeError("gradcheck: fn must return a scalar");
    return root.val()[0];
}

struct CheckStats {
    int checked = 0;
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Relative error with a floored denominator: gradients that are genuinely
// ~0 only have central-difference roundoff (~1e-10) to compare against.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

// Central differences of f carry cancellation noise ~ |f| * eps / h; a
// coordinate whose true derivative is exactly zero (e.g. a bias feeding a
// batch norm) measures only that noise. fd_atol is the standard absolute
// floor below which a disagreement is indistinguishable from roundoff.
inline double fd_atol(double f_scale, double h) {
    return 64.0 * std::abs(f_scale) * 2.220446049250313e-16 / h;
}

inline double fd_err(double analytic, double numeric, double atol) {
    if (std::abs(analytic - numeric) <= atol) return 0.0;
    return rel_err(analytic, numeric);
}

// Central differences on every coordinate of every input (or a random
// subset of max_coords per input when set). Returns the worst relative
// error seen; the caller asserts against the tolerance.
template <typename T>
CheckStats check_gradients(const ScalarFn<T>& fn, const std::vector<Shape>& shapes,
                           std::vector<std::vector<T>> values, T h = T(1e-6),
                           int max_coords_per_input = 0, featmap::Rng* rng = nullptr) {
    // analytic pass
    std::vector<std::vector<T>> analytic(shapes.size());
    {
        Tape<T> t;
        std::vector<Var<T>> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(t.leaf(shapes[i], values[i], true));
        Var<T> root = fn(t, leaves);
        t.backward(root);
        for (size_t i = 0; i < shapes.size(); ++i) analytic[i] = t.grad(leaves[i].id);
    }

    CheckStats stats;
    const double f0 = double(eval_scalar(fn, shapes, values));
    const double atol = fd_atol(f0, double(h));
    for (size_t i = 0; i < shapes.size(); ++i) {
        const size_t n = values[i].size();
        std::vector<size_t> coords;
        if (max_coords_per_input > 0 && n > size_t(max_coords_per_input) && rng) {
            for (int k = 0; k < max_coords_per_input; ++k) coords.push_back(size_t(rng->uniform_int(int(n))));
        } else {
            coords.resize(n);
            for (size_t k = 0; k < n; ++k) coords[k] = k;
        }
        for (size_t j : coords) {
            const T orig = values[i][j];
            values[i][j] = orig + h;
            const T fp = eval_scalar(fn, shapes, values);
            values[i][j] = orig - h;
            const T fm = eval_scalar(fn, shapes, values);
            values[i][j] = orig;
            const double numeric = double(fp - fm) / (2.0 * double(h));
            const double err = fd_err(double(analytic[i][j]), numeric, atol);
            ++stats.checked;
            if (err > stats.max_rel_err) {
                stats.max_rel_err = err;
                stats.worst_analytic = double(analytic[i][j]);
                stats.worst_numeric = numeric;
            }
        }
    }
    return stats;
}

// Directional derivative along a random unit-ish direction; two function
// evaluations regardless of parameter count.
template <typename T>
CheckStats check_directional(const ScalarFn<T>& fn, const std::vector<Shape>& shapes,
                             std::vector<std::vector<T>> values, featmap::Rng& rng,
                             T h = T(1e-6)) {
    std::vector<std::vector<T>> dir(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i) {
        dir[i].resize(values[i].size());
        for (auto& d : dir[i]) d = T(rng.uniform(-1.0, 1.0));
    }

    double analytic_dot = 0.0;
    {
        Tape<T> t;
        std::vector<Var<T>> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(t.leaf(shapes[i], values[i], true));
        Var<T> root = fn(t, leaves);
        t.backward(root);
        for (size_t i = 0; i < shapes.size(); ++i) {
            const std::vector<T>& g = t.grad(leaves[i].id);
            for (size_t j = 0; j < g.size(); ++j) analytic_dot += double(g[j]) * double(dir[i][j]);
        }
    }

    std::vector<std::vector<T>> vp = values, vm = values;
    for (size_t i = 0; i < shapes.size(); ++i)
        for (size_t j = 0; j < values[i].size(); ++j) {
            vp[i][j] += h * dir[i][j];
            vm[i][j] -= h * dir[i][j];
        }
    const double numeric = (double(eval_scalar(fn, shapes, vp)) - double(eval_scalar(fn, shapes, vm))) /
                           (2.0 * double(h));

    CheckStats stats;
    stats.checked = 1;
    stats.max_rel_err = rel_err(analytic_dot, numeric);
    stats.worst_analytic = analytic_dot;
    stats.worst_numeric = numeric;
    return stats;
}

// Random values bounded away from the kinks of relu/abs/max so that
// central differences stay on one linear piece.
template <typename T>
std::vector<T> smooth_random(featmap::Rng& rng, int64_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<T> v(static_cast<size_t>(n));
    for (auto& x : v) {
        double r = 0.0;
        do {
            r = rng.uniform(lo, hi);
        } while (std::abs(r) < 1e-3);
        x = T(r);
    }
    return v;
}

}  // namespace gradcheck
