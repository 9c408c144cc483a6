#include <doctest.h>

#include <cmath>
#include <numeric>

#include "efe/gradcheck.hpp"
#include "efe/params.hpp"
#include "efe/rng.hpp"
#include "efe/tensor.hpp"

using namespace efe;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// Straight seven-loop convolution, the reference for both kernels.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                               std::size_t pad, std::size_t& oh, std::size_t& ow) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), k = w.dim(2);
    oh = (h + 2 * pad - k) / stride + 1;
    ow = (wd + 2 * pad - k) / stride + 1;
    std::vector<double> out(n * o * oh * ow, 0.0);
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = b.empty() ? 0.0 : b[oc];
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long sy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                                const long sx = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd))
                                    continue;
                                acc += x[((in * c + ic) * h + sy) * wd + sx] * w[((oc * c + ic) * k + ky) * k + kx];
                            }
                    out[((in * o + oc) * oh + y) * ow + xx] = acc;
                }
    return out;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("broadcast add matches numpy semantics") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3}, {10, 20, 30});
    Tensor c = add(a, b);
    CHECK(c.shape() == Shape{2, 3});
    const std::vector<double> want{11, 22, 33, 14, 25, 36};
    for (std::size_t i = 0; i < 6; ++i) CHECK(c[i] == want[i]);

    Tensor col({2, 1}, {1, 2});
    Tensor d = mul(a, col);
    CHECK(d[5] == 12.0);
    CHECK(d[0] == 1.0);
}

TEST_CASE("shape errors name the op and both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4});
    try {
        (void)add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4]") != std::string::npos);
    }
    try {
        (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("backward rejects non-scalar losses and empty tapes") {
    Tape empty;
    CHECK_THROWS_AS(empty.backward(Tensor::scalar(1.0)), std::logic_error);

    Tape tape;
    Tensor x = tape.variable({3}, {1, 2, 3});
    Tensor y = square(x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("gradients accumulate over repeated uses") {
    Tape tape;
    Tensor x = tape.variable({2}, {3.0, -2.0});
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    const auto g = tape.gradient(x);
    CHECK(g[0] == doctest::Approx(6.0));
    CHECK(g[1] == doctest::Approx(-4.0));
}

TEST_CASE("parameter leaves receive gradients") {
    ParameterStore store;
    Parameter& p = store.add("w", {2}, {1.0, 2.0});
    store.zero_grad();
    Tape tape;
    Binding bind(&tape);
    Tensor w = bind(p);
    tape.backward(sum(scale(w, 3.0)));
    CHECK(p.grad[0] == doctest::Approx(3.0));
    CHECK(p.grad[1] == doctest::Approx(3.0));
}

TEST_CASE("untracked ops record nothing") {
    Tensor a({2}, {1, 2});
    Tensor b = add(a, a);
    CHECK_FALSE(b.tracked());
    CHECK(b[1] == 4.0);
}

TEST_CASE("matmul by hand") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == 17.0);
    CHECK(c[1] == 39.0);
}

TEST_CASE("conv2d agrees with a direct loop on both kernels") {
    Rng rng(5);
    struct Case {
        std::size_t n, c, h, w, o, k, stride, pad;
    };
    // Small C*K*K takes the direct kernel; the wide case goes through im2col.
    const Case cases[] = {{2, 3, 7, 9, 4, 3, 1, 1}, {1, 2, 8, 6, 3, 3, 2, 1}, {1, 50, 5, 5, 2, 3, 1, 1},
                          {2, 4, 5, 5, 3, 1, 1, 0}, {1, 1, 6, 6, 1, 5, 1, 2}};
    for (const auto& cs : cases) {
        Tensor x({cs.n, cs.c, cs.h, cs.w}, random_values(rng, cs.n * cs.c * cs.h * cs.w));
        Tensor w({cs.o, cs.c, cs.k, cs.k}, random_values(rng, cs.o * cs.c * cs.k * cs.k));
        Tensor b({cs.o}, random_values(rng, cs.o));
        std::size_t oh = 0, ow = 0;
        const auto want = naive_conv(x, w, b, cs.stride, cs.pad, oh, ow);
        Tensor got = conv2d(x, w, b, cs.stride, cs.pad);
        REQUIRE(got.shape() == Shape{cs.n, cs.o, oh, ow});
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("spatial_softmax peaks at a dominant logit") {
    std::vector<double> v(9, 0.0);
    v[4] = 10.0;
    Tensor p = spatial_softmax(Tensor({3, 3}, v));
    CHECK(p[4] == doctest::Approx(0.99964).epsilon(1e-5));
    CHECK(p[4] == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 8.0)).epsilon(1e-14));
}

TEST_CASE("spatial_softmax rows sum to one and are shift invariant") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = random_values(rng, 2 * 3 * 4 * 5);
        for (auto& x : v) x *= 30.0;
        Tensor p = spatial_softmax(Tensor({2, 3, 4, 5}, v));
        for (std::size_t m = 0; m < 6; ++m) {
            double s = 0.0;
            for (std::size_t i = 0; i < 20; ++i) s += p[m * 20 + i];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
        auto shifted = v;
        for (auto& x : shifted) x += 123.0;
        Tensor q = spatial_softmax(Tensor({2, 3, 4, 5}, shifted));
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-10));
    }
}

TEST_CASE("acos clamps at the domain edge") {
    Tensor a = acos(Tensor({2}, {1.0, -1.0}));
    CHECK(std::isfinite(a[0]));
    CHECK(a[0] == doctest::Approx(std::acos(1.0 - 1e-7)));
    CHECK(a[1] == doctest::Approx(std::acos(-1.0 + 1e-7)));
}

TEST_CASE("shape ops") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(select_last(a, 2)[1] == 6.0);
    CHECK(reshape(a, {3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
    Tensor s = slice_rows(a, 1, 2);
    CHECK(s.shape() == Shape{1, 3});
    CHECK(s[0] == 4.0);
    Tensor parts[] = {select_last(a, 0), select_last(a, 1)};
    Tensor st = stack_last(parts);
    CHECK(st.shape() == Shape{2, 2});
    CHECK(st[2] == 4.0);
    CHECK(dot_last(a, a)[0] == 14.0);
    CHECK(sum_last(a, 1)[1] == 15.0);
    CHECK(mean(a).item() == 3.5);
    CHECK(l1_norm(neg(a)).item() == 21.0);
    CHECK(squared_l2(a).item() == 91.0);
}

TEST_CASE("upsample and concat") {
    Tensor a({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor u = upsample_nearest(a, 4, 4);
    CHECK(u.shape() == Shape{1, 1, 4, 4});
    CHECK(u[0] == 1.0);
    CHECK(u[3] == 2.0);
    CHECK(u[15] == 4.0);
    Tensor parts[] = {a, scale(a, 10.0)};
    Tensor c = concat_channels(parts);
    CHECK(c.shape() == Shape{1, 2, 2, 2});
    CHECK(c[4] == 10.0);
}

TEST_CASE("leaky_relu and clamp branches") {
    Tensor x({3}, {-2.0, 0.5, 3.0});
    Tensor l = leaky_relu(x, 0.1);
    CHECK(l[0] == doctest::Approx(-0.2));
    CHECK(l[2] == 3.0);
    Tensor c = clamp(x, -1.0, 1.0);
    CHECK(c[0] == -1.0);
    CHECK(c[1] == 0.5);
    CHECK(c[2] == 1.0);
}

TEST_CASE("kink recorder sees branch changes") {
    std::vector<std::uint8_t> before, after;
    {
        KinkRecorder rec;
        (void)abs(Tensor({1}, {0.1}));
        before = rec.signature();
    }
    {
        KinkRecorder rec;
        (void)abs(Tensor({1}, {-0.1}));
        after = rec.signature();
    }
    CHECK(before != after);
    CHECK_FALSE(KinkRecorder::active());
}

TEST_CASE("gradcheck flags a wrong gradient") {
    // A correct op passes; an op whose backward is off by a factor fails.
    const std::vector<GradcheckInput> in{{{3}, {0.3, -0.7, 1.1}}};
    auto good = check_gradient("tanh", [](const std::vector<Tensor>& v) { return sum(tanh(v[0])); }, in);
    CHECK(good.passed);
    auto bad = check_gradient(
        "broken",
        [](const std::vector<Tensor>& v) {
            const Tensor& x = v[0];
            std::vector<double> out(x.numel());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
            if (!x.tracked()) return sum(Tensor(x.shape(), out));
            const Tensor* parents[] = {&x};
            Tensor y = x.tape()->record(x.shape(), out, parents, [x](std::span<const double> g, Tape& t) {
                auto gx = t.grad_of(x);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * 3.0 * x[i];
            });
            return sum(y);
        },
        in);
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_rel_error > 0.1);
}

}  // TEST_SUITE
