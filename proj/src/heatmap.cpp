#include "efe/heatmap.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace efe {

Tensor make_gt_heatmap(const Eigen::Vector2d& g, double sigma, std::size_t height, std::size_t width) {
    if (!(sigma > 0.0)) throw std::invalid_argument("make_gt_heatmap: sigma must be positive");
    if (!(g.x() >= 0.0 && g.y() >= 0.0 && g.x() <= static_cast<double>(width) - 1.0 &&
          g.y() <= static_cast<double>(height) - 1.0)) {
        throw std::invalid_argument("make_gt_heatmap: origin (" + std::to_string(g.x()) + ", " +
                                    std::to_string(g.y()) + ") outside the image");
    }
    std::vector<double> v(height * width);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t y = 0; y < height; ++y) {
        const double dy = static_cast<double>(y) - g.y();
        for (std::size_t x = 0; x < width; ++x) {
            const double dx = static_cast<double>(x) - g.x();
            v[y * width + x] = std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
    return Tensor({height, width}, std::move(v));
}

double default_heatmap_sigma(std::size_t width) { return 0.02 * static_cast<double>(width); }

Tensor soft_argmax(const Tensor& prob) {
    if (prob.rank() < 2) throw ShapeError("soft_argmax: expected (..., H, W), got " + shape_str(prob.shape()));
    const std::size_t h = prob.dim(prob.rank() - 2);
    const std::size_t w = prob.dim(prob.rank() - 1);
    const std::size_t maps = prob.numel() / (h * w);
    const auto p = prob.data();
    for (std::size_t m = 0; m < maps; ++m) {
        double total = 0.0;
        for (std::size_t i = 0; i < h * w; ++i) total += p[m * h * w + i];
        if (std::abs(total - 1.0) > 1e-6) {
            throw std::invalid_argument("soft_argmax: map " + std::to_string(m) + " sums to " +
                                        std::to_string(total) + ", expected a probability map");
        }
    }
    std::vector<double> xs(h * w), ys(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            xs[y * w + x] = static_cast<double>(x);
            ys[y * w + x] = static_cast<double>(y);
        }
    }
    const Tensor gx({h, w}, std::move(xs));
    const Tensor gy({h, w}, std::move(ys));
    const Tensor parts[] = {sum_last(mul(prob, gx), 2), sum_last(mul(prob, gy), 2)};
    return stack_last(parts);
}

Tensor depth_readout(const Tensor& prob, const Tensor& depth) {
    if (prob.shape() != depth.shape() || prob.rank() < 2) {
        throw ShapeError("depth_readout: shape mismatch " + shape_str(prob.shape()) + " vs " +
                         shape_str(depth.shape()));
    }
    return sum_last(mul(prob, depth), 2);
}

OriginLosses origin_losses(const Tensor& h, const Tensor& h_gt, const Tensor& g, const Tensor& g_gt,
                           const Tensor& z, const Tensor& z_gt) {
    if (h.shape() != h_gt.shape()) {
        throw ShapeError("origin_losses: heatmap shape " + shape_str(h.shape()) + " vs " +
                         shape_str(h_gt.shape()));
    }
    if (g.shape() != g_gt.shape() || z.shape() != z_gt.shape()) {
        throw ShapeError("origin_losses: label shape mismatch " + shape_str(g.shape()) + "/" +
                         shape_str(z.shape()));
    }
    const double samples = g.rank() > 1 ? static_cast<double>(g.dim(0)) : 1.0;
    OriginLosses out;
    out.heatmap = mean(square(sub(h, h_gt)));
    out.g = scale(squared_l2(sub(g, g_gt)), 1.0 / samples);
    out.d = scale(l1_norm(sub(z, z_gt)), 1.0 / samples);
    return out;
}

}  // namespace efe
