#include <doctest.h>

#include <cmath>
#include <numbers>

#include "efe/heatmap.hpp"
#include "efe/rng.hpp"

using namespace efe;

namespace {

// Random normalized map with all mass at least `margin` cells from the border.
std::vector<double> interior_map(Rng& rng, std::size_t h, std::size_t w, std::size_t margin) {
    std::vector<double> p(h * w, 0.0);
    double s = 0.0;
    for (std::size_t y = margin; y + margin < h; ++y)
        for (std::size_t x = margin; x + margin < w; ++x) s += p[y * w + x] = rng.uniform();
    for (auto& v : p) v /= s;
    return p;
}

}  // namespace

TEST_SUITE("heatmap") {

TEST_CASE("gaussian target mass and peak") {
    const double sigma = 3.0;
    const Tensor h = make_gt_heatmap({31.0, 17.0}, sigma, 36, 64);
    double s = 0.0, peak = 0.0;
    for (double v : h.data()) {
        s += v;
        peak = std::max(peak, v);
    }
    CHECK(std::abs(s - 2.0 * std::numbers::pi * sigma * sigma) / (2.0 * std::numbers::pi * sigma * sigma) < 0.01);
    CHECK(peak == 1.0);
    CHECK(h[17 * 64 + 31] == 1.0);
    CHECK(default_heatmap_sigma(64) == doctest::Approx(1.28));
}

TEST_CASE("gaussian target rejects bad inputs") {
    CHECK_THROWS(make_gt_heatmap({10.0, 10.0}, 0.0, 36, 64));
    CHECK_THROWS(make_gt_heatmap({70.0, 10.0}, 1.0, 36, 64));
    CHECK_THROWS(make_gt_heatmap({10.0, -3.0}, 1.0, 36, 64));
}

TEST_CASE("soft_argmax on a hand-computed 3x3 map") {
    const Tensor p({3, 3}, {0.1, 0.2, 0.1, 0.0, 0.3, 0.0, 0.1, 0.1, 0.1});
    const Tensor g = soft_argmax(p);
    CHECK(g.shape() == Shape{2});
    CHECK(std::abs(g[0] - 1.0) < 1e-12);
    CHECK(std::abs(g[1] - 0.9) < 1e-12);
}

TEST_CASE("soft_argmax of a one-hot map is exact") {
    for (std::size_t y = 0; y < 9; ++y) {
        for (std::size_t x = 0; x < 16; ++x) {
            std::vector<double> p(9 * 16, 0.0);
            p[y * 16 + x] = 1.0;
            const Tensor g = soft_argmax(Tensor({9, 16}, p));
            CHECK(g[0] == static_cast<double>(x));
            CHECK(g[1] == static_cast<double>(y));
        }
    }
}

TEST_CASE("soft_argmax is translation equivariant") {
    Rng rng(31);
    const std::size_t h = 20, w = 30;
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = interior_map(rng, h, w, 5);
        const long dx = static_cast<long>(rng.below(9)) - 4, dy = static_cast<long>(rng.below(9)) - 4;
        std::vector<double> q(h * w, 0.0);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                if (p[y * w + x] == 0.0) continue;
                q[static_cast<std::size_t>(static_cast<long>(y) + dy) * w + static_cast<std::size_t>(static_cast<long>(x) + dx)] =
                    p[y * w + x];
            }
        const Tensor a = soft_argmax(Tensor({h, w}, p));
        const Tensor b = soft_argmax(Tensor({h, w}, q));
        CHECK(std::abs(b[0] - a[0] - static_cast<double>(dx)) < 1e-9);
        CHECK(std::abs(b[1] - a[1] - static_cast<double>(dy)) < 1e-9);
    }
}

TEST_CASE("soft_argmax needs normalized maps") {
    CHECK_THROWS_AS(soft_argmax(Tensor({2, 2}, {0.5, 0.5, 0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("constant depth map reads out its constant") {
    Rng rng(32);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = interior_map(rng, 9, 16, 0);
        const double c = rng.uniform(300, 1500);
        const Tensor z = depth_readout(Tensor({9, 16}, p), Tensor::full({9, 16}, c));
        CHECK(std::abs(z.item() - c) < 1e-9);
    }
}

TEST_CASE("origin losses") {
    const Tensor h = Tensor::zeros({1, 2, 2});
    const Tensor h_gt = Tensor::full({1, 2, 2}, 0.5);
    const Tensor g({1, 2}, {3.0, 4.0});
    const Tensor g_gt({1, 2}, {0.0, 0.0});
    const Tensor z({1}, {600.0});
    const Tensor z_gt({1}, {610.0});
    const OriginLosses l = origin_losses(h, h_gt, g, g_gt, z, z_gt);
    CHECK(l.heatmap.item() == doctest::Approx(0.25));
    CHECK(l.d.item() == doctest::Approx(10.0));
    CHECK(l.g.item() == doctest::Approx(25.0));

    const OriginLosses zero = origin_losses(h_gt, h_gt, g, g, z, z);
    CHECK(zero.heatmap.item() == 0.0);
    CHECK(zero.g.item() == 0.0);
    CHECK(zero.d.item() == 0.0);
}

}  // TEST_SUITE
