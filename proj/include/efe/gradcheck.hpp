#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "efe/tensor.hpp"

namespace efe {

struct GradcheckOptions {
    double eps = 1e-5;
    double tolerance = 1e-4;
    /// Relative error is |a - n| / max(|a|, |n|, floor).
    double floor = 1e-3;
    std::uint64_t seed = 0;
};

struct GradcheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose stencil crossed a kink (branch change).
    std::size_t skipped = 0;
    bool passed = false;
};

struct GradcheckInput {
    Shape shape;
    std::vector<double> value;
};

/// f maps its inputs to a scalar. Analytic gradients come from one taped
/// evaluation; each coordinate is then compared with a central difference
/// of untaped evaluations. Stencils whose kink signature differs from the
/// unperturbed one are skipped.
using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;
GradcheckResult check_gradient(const std::string& name, const GradFn& f, const std::vector<GradcheckInput>& inputs,
                               const GradcheckOptions& opts = {});

/// One check per differentiable op, including the geometry and heatmap ops.
std::vector<GradcheckResult> gradcheck_ops(const GradcheckOptions& opts = {});

/// Checks the full EFE loss (every term active) against every trainable
/// parameter of a small model on 16x9 inputs. `params` receives the
/// model's trainable parameter count.
GradcheckResult gradcheck_efe_loss(const GradcheckOptions& opts = {}, std::size_t* params = nullptr);

}  // namespace efe
