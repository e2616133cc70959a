#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "featmap/ops.hpp"
#include "gradcheck.hpp"

using namespace featmap;
using gradcheck::check_gradients;
using gradcheck::smooth_random;

namespace {

template <typename T>
Var<T> weighted_scalarize(Tape<T>& t, Var<T> v, Rng& rng) {
    if (numel(v.shape()) == 1) return v;
    std::vector<T> w(size_t(numel(v.shape())));
    for (auto& x : w) x = T(rng.uniform(-1.0, 1.0));
    return sum(mul(v, t.constant(v.shape(), w)));
}

}  // namespace

TEST_CASE("elementwise forward examples") {
    Tape<double> t;
    auto a = t.constant({2}, {1, 2});
    auto b = t.constant({2}, {3, 4});
    CHECK(add(a, b).val() == std::vector<double>{4, 6});
    CHECK(sub(b, a).val() == std::vector<double>{2, 2});
    CHECK(mul(a, b).val() == std::vector<double>{3, 8});
    CHECK(scalar_mul(a, 2.5).val() == std::vector<double>{2.5, 5.0});
    CHECK(abs_op(t.constant({3}, {-1, 0, 2})).val() == std::vector<double>{1, 0, 2});
    CHECK(square(t.constant({2}, {3, -2})).val() == std::vector<double>{9, 4});
}

TEST_CASE("matmul identity returns its input") {
    Tape<double> t;
    auto eye = t.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto v = t.constant({3, 1}, {2.5, -1.0, 7.0});
    CHECK(matmul(eye, v).val() == std::vector<double>{2.5, -1.0, 7.0});
}

TEST_CASE("conv2d of ones image with ones kernel") {
    // 4x4 ones, 3x3 ones kernel, stride 1, pad 1: interior pixels see the
    // full 3x3 window -> 9; corners see 2x2 -> 4.
    Tape<double> t;
    auto x = t.constant({1, 1, 4, 4}, std::vector<double>(16, 1.0));
    auto w = t.constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    auto y = conv2d(x, w, 1, 1);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    CHECK(y.val()[5] == doctest::Approx(9.0));   // (1,1) interior
    CHECK(y.val()[0] == doctest::Approx(4.0));   // corner
    CHECK(y.val()[1] == doctest::Approx(6.0));   // edge
}

TEST_CASE("backward of sum is all ones; repeated calls accumulate") {
    Tape<double> t;
    auto x = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto root = sum(x);
    t.backward(root);
    CHECK(t.grad(x.id) == std::vector<double>(6, 1.0));
    t.backward(root);
    CHECK(t.grad(x.id) == std::vector<double>(6, 2.0));
}

TEST_CASE("backward of squared L2 norm is 2x") {
    Tape<double> t;
    auto x = t.leaf({2}, {1, -2}, true);
    t.backward(l2_norm_sq(x));
    CHECK(t.grad(x.id) == std::vector<double>{2, -4});
}

TEST_CASE("backward requires a scalar root") {
    Tape<double> t;
    auto x = t.leaf({2}, {1, 2}, true);
    CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("shape mismatch reports op kind and both shapes") {
    Tape<double> t;
    auto a = t.constant({2}, {1, 2});
    auto b = t.constant({3}, {1, 2, 3});
    try {
        (void)sub(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("sub") != std::string::npos);
        CHECK(msg.find("[2]") != std::string::npos);
        CHECK(msg.find("[3]") != std::string::npos);
    }
}

TEST_CASE("unknown op kind is rejected") {
    Tape<double> t;
    auto a = t.constant({1}, {1});
    CHECK_THROWS_AS((void)forward_primitive(OpKind(999), std::vector<Var<double>>{a}),
                    featmap::Error);
}

TEST_CASE("untracked subgraphs record no backward steps") {
    Tape<double> t;
    auto x = t.constant({1, 1, 4, 4}, std::vector<double>(16, 0.5));
    auto w = t.constant({2, 1, 3, 3}, std::vector<double>(18, 0.1));
    (void)relu(conv2d(x, w, 1, 1));
    CHECK(t.step_count() == 0);
}

namespace {

struct PrimitiveCase {
    OpKind kind;
    std::vector<Shape> shapes;
    OpAttrs<double> attrs;
};

std::vector<PrimitiveCase> primitive_cases(Rng& rng) {
    std::vector<PrimitiveCase> cases;
    auto dim = [&](int lo, int hi) { return lo + rng.uniform_int(hi - lo + 1); };

    {
        const int n = dim(1, 4), k = dim(1, 4), m = dim(1, 4);
        cases.push_back({OpKind::Matmul, {{n, k}, {k, m}}, {}});
    }
    {
        OpAttrs<double> a;
        a.stride = 1;
        a.pad = dim(0, 1);
        const int n = dim(1, 2), ci = dim(1, 2), co = dim(1, 2), h = dim(3, 5);
        cases.push_back({OpKind::Conv2d, {{n, ci, h, h}, {co, ci, 3, 3}}, a});
    }
    {
        OpAttrs<double> a;
        a.stride = 2;
        a.pad = 0;
        cases.push_back({OpKind::Conv2d, {{1, dim(1, 2), 5, 5}, {dim(1, 2), 0, 3, 3}}, a});
        cases.back().shapes[1][1] = cases.back().shapes[0][1];
    }
    {
        OpAttrs<double> a;
        a.stride = 2;
        a.pad = 1;
        const int ci = dim(1, 2), co = dim(1, 2);
        cases.push_back({OpKind::TransposedConv2d, {{1, ci, 3, 3}, {ci, co, 4, 4}}, a});
    }
    {
        const int n = dim(1, 2), c = dim(1, 2), h = 2 * dim(1, 2);
        cases.push_back({OpKind::MaxPool2x2, {{n, c, h, h}}, {}});
    }
    cases.push_back({OpKind::BilinearUpsample2x, {{1, dim(1, 2), dim(2, 4), dim(2, 4)}}, {}});
    {
        const int n = dim(1, 4), m = dim(1, 4);
        cases.push_back({OpKind::Add, {{n, m}, {n, m}}, {}});
        cases.push_back({OpKind::Add, {{n, m}, {m}}, {}});  // row broadcast
        cases.push_back({OpKind::Add, {{2, m, 3, 3}, {m}}, {}});  // channel broadcast
        cases.push_back({OpKind::Sub, {{n, m}, {n, m}}, {}});
        cases.push_back({OpKind::Mul, {{n, m}, {n, m}}, {}});
    }
    {
        OpAttrs<double> a;
        a.scalar = rng.uniform(-2.0, 2.0);
        cases.push_back({OpKind::ScalarMul, {{dim(1, 6)}}, a});
    }
    cases.push_back({OpKind::Relu, {{dim(2, 8)}}, {}});
    {
        OpAttrs<double> a;
        a.slope = 0.2;
        cases.push_back({OpKind::LeakyRelu, {{dim(2, 8)}}, a});
    }
    cases.push_back({OpKind::Tanh, {{dim(2, 8)}}, {}});
    {
        OpAttrs<double> a;
        const int n = dim(1, 3), m = dim(1, 4);
        a.reshape_to = {m, n};
        cases.push_back({OpKind::Reshape, {{n, m}}, a});
    }
    cases.push_back({OpKind::Sum, {{dim(2, 8)}}, {}});
    cases.push_back({OpKind::Mean, {{dim(2, 8)}}, {}});
    cases.push_back({OpKind::Abs, {{dim(2, 8)}}, {}});
    cases.push_back({OpKind::Square, {{dim(2, 8)}}, {}});
    cases.push_back({OpKind::L2NormSq, {{dim(2, 8)}}, {}});
    {
        const int n = dim(2, 4), c = dim(1, 3);
        cases.push_back({OpKind::BatchNorm, {{n, c}, {c}, {c}}, {}});
        cases.push_back({OpKind::BatchNorm, {{n, c, 2, 2}, {c}, {c}}, {}});
    }
    return cases;
}

}  // namespace

TEST_CASE("every primitive matches central finite differences") {
    int total_checks = 0;
    double worst = 0.0;
    for (uint64_t trial = 0; trial < 8; ++trial) {
        Rng rng(mix_seed(0xAD17, trial));
        for (const PrimitiveCase& pc : primitive_cases(rng)) {
            std::vector<std::vector<double>> values;
            for (const Shape& s : pc.shapes) values.push_back(smooth_random<double>(rng, numel(s)));

            // running stats local to each rebuilt forward; training-mode BN
            // output does not depend on them
            auto fn = [&pc](Tape<double>& t, const std::vector<Var<double>>& in) {
                OpAttrs<double> attrs = pc.attrs;
                std::vector<double> mean_buf, var_buf;
                if (pc.kind == OpKind::BatchNorm) {
                    const int c = pc.shapes[0][1];
                    mean_buf.assign(size_t(c), 0.0);
                    var_buf.assign(size_t(c), 1.0);
                    attrs.bn.running_mean = &mean_buf;
                    attrs.bn.running_var = &var_buf;
                    attrs.training = true;
                }
                Var<double> out = forward_primitive(pc.kind, in, attrs);
                Rng wrng(1234);
                return weighted_scalarize(t, out, wrng);
            };
            auto stats = check_gradients<double>(fn, pc.shapes, values);
            total_checks += stats.checked;
            if (stats.max_rel_err > worst) worst = stats.max_rel_err;
            INFO("op " << std::string(op_name(pc.kind)) << " trial " << trial << " analytic "
                       << stats.worst_analytic << " numeric " << stats.worst_numeric);
            CHECK(stats.max_rel_err < 1e-4);
        }
    }
    CHECK(total_checks >= 100);
    MESSAGE("primitive gradcheck: ", total_checks, " coordinates, worst rel err ", worst);
}

TEST_CASE("batch-norm gradient in inference mode") {
    Rng rng(77);
    const int n = 3, c = 2;
    std::vector<Shape> shapes{{n, c}, {c}, {c}};
    std::vector<std::vector<double>> values;
    for (const Shape& s : shapes) values.push_back(smooth_random<double>(rng, numel(s)));
    std::vector<double> rm{0.3, -0.1}, rv{1.5, 0.7};
    auto fn = [&](Tape<double>& t, const std::vector<Var<double>>& in) {
        std::vector<double> rm_copy = rm, rv_copy = rv;
        BatchNormState<double> st;
        st.running_mean = &rm_copy;
        st.running_var = &rv_copy;
        Var<double> out = batch_norm(in[0], in[1], in[2], st, /*training=*/false);
        Rng wrng(99);
        return weighted_scalarize(t, out, wrng);
    };
    auto stats = check_gradients<double>(fn, shapes, values);
    CHECK(stats.max_rel_err < 1e-4);
}

TEST_CASE("batch-norm in inference mode is affine (superposition)") {
    const int n = 4, c = 3;
    std::vector<double> rm{0.2, -0.4, 1.0}, rv{0.9, 2.0, 0.5};
    std::vector<double> gamma{1.3, 0.7, -0.5}, beta{0.1, -0.2, 0.6};
    Rng rng(5);
    std::vector<double> x1 = smooth_random<double>(rng, n * c);
    std::vector<double> x2 = smooth_random<double>(rng, n * c);

    auto run = [&](const std::vector<double>& x) {
        Tape<double> t;
        std::vector<double> rms = rm, rvs = rv;
        BatchNormState<double> st;
        st.running_mean = &rms;
        st.running_var = &rvs;
        auto out = batch_norm(t.constant({n, c}, x), t.constant({c}, gamma), t.constant({c}, beta),
                              st, false);
        return out.val();
    };

    std::vector<double> xsum(x1.size());
    for (size_t i = 0; i < x1.size(); ++i) xsum[i] = x1[i] + x2[i];
    const auto f1 = run(x1), f2 = run(x2), fs = run(xsum), f0 = run(std::vector<double>(x1.size(), 0.0));
    for (size_t i = 0; i < x1.size(); ++i) CHECK(std::abs(fs[i] - f1[i] - f2[i] + f0[i]) < 1e-12);
}

TEST_CASE("batch-norm training mode updates running stats, inference freezes them") {
    const int n = 8, c = 1;
    Rng rng(9);
    std::vector<double> x = smooth_random<double>(rng, n * c);
    std::vector<double> rm{0.0}, rv{1.0};
    BatchNormState<double> st;
    st.running_mean = &rm;
    st.running_var = &rv;
    {
        Tape<double> t;
        (void)batch_norm(t.constant({n, c}, x), t.constant({c}, {1.0}), t.constant({c}, {0.0}), st,
                         true);
    }
    double xm = 0;
    for (double v : x) xm += v;
    xm /= n;
    CHECK(rm[0] == doctest::Approx(0.1 * xm));
    const std::vector<double> rm_before = rm, rv_before = rv;
    {
        Tape<double> t;
        (void)batch_norm(t.constant({n, c}, x), t.constant({c}, {1.0}), t.constant({c}, {0.0}), st,
                         false);
    }
    CHECK(rm == rm_before);
    CHECK(rv == rv_before);
}

TEST_CASE("forward and backward are deterministic") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tape<float> t;
        auto x = t.leaf({2, 1, 8, 8}, smooth_random<float>(rng, 128), true);
        auto w = t.leaf({4, 1, 3, 3}, smooth_random<float>(rng, 36), true);
        auto h = relu(conv2d(x, w, 1, 1));
        auto p = max_pool2x2(h);
        auto root = l2_norm_sq(reshape(p, {2, 4 * 4 * 4}));
        t.backward(root);
        std::vector<float> out = root.val();
        const auto& gx = t.grad(x.id);
        const auto& gw = t.grad(w.id);
        out.insert(out.end(), gx.begin(), gx.end());
        out.insert(out.end(), gw.begin(), gw.end());
        return out;
    };
    CHECK(run(42) == run(42));
    CHECK(run(42) != run(43));
}

TEST_CASE("gradients of finite forward values stay finite") {
    Rng rng(1717);
    for (int trial = 0; trial < 20; ++trial) {
        Tape<double> t;
        auto x = t.leaf({4, 6}, smooth_random<double>(rng, 24), true);
        auto w = t.leaf({6, 3}, smooth_random<double>(rng, 18), true);
        auto root = mean(square(tanh_op(matmul(x, w))));
        t.backward(root);
        for (double g : t.grad(x.id)) CHECK(std::isfinite(g));
        for (double g : t.grad(w.id)) CHECK(std::isfinite(g));
    }
}
