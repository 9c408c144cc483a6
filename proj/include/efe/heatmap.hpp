#pragma once

#include <Eigen/Core>

#include "efe/tensor.hpp"

namespace efe {

/// Unnormalized Gaussian target: exp(-|(u,v) - g|^2 / (2 sigma^2)) over an
/// H x W grid of pixel centers. Throws when g is outside the image or
/// sigma <= 0.
Tensor make_gt_heatmap(const Eigen::Vector2d& g, double sigma, std::size_t height, std::size_t width);

/// Default Gaussian width for a heatmap of the given width (2% of it).
double default_heatmap_sigma(std::size_t width);

/// Expected pixel-center coordinates under probability maps.
/// (..., H, W) -> (..., 2) ordered (x, y). Every map must sum to 1 within
/// 1e-6, otherwise std::invalid_argument.
Tensor soft_argmax(const Tensor& prob);

/// z = sum h(u,v) d(u,v) per map: (..., H, W) x (..., H, W) -> (...).
Tensor depth_readout(const Tensor& prob, const Tensor& depth);

struct OriginLosses {
    Tensor heatmap;  // mean squared error per cell (and per sample)
    Tensor g;        // squared L2 distance, averaged over samples
    Tensor d;        // absolute depth error, averaged over samples
};

/// h, h_gt: (N, H, W); g, g_gt: (N, 2); z, z_gt: (N).
OriginLosses origin_losses(const Tensor& h, const Tensor& h_gt, const Tensor& g, const Tensor& g_gt,
                           const Tensor& z, const Tensor& z_gt);

}  // namespace efe
