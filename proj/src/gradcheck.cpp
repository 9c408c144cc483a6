#include "efe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "efe/camera.hpp"
#include "efe/gaze_geom.hpp"
#include "efe/heatmap.hpp"
#include "efe/model.hpp"
#include "efe/rng.hpp"
#include "efe/synth.hpp"
#include "efe/training.hpp"

namespace efe {

namespace {

struct Accumulator {
    const GradcheckOptions& opts;
    GradcheckResult result;

    void compare(double analytic, double plus, double minus) {
        const double numeric = (plus - minus) / (2.0 * opts.eps);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
        ++result.checked;
    }

    GradcheckResult finish() {
        result.passed = result.checked > 0 && result.max_rel_error < opts.tolerance;
        return result;
    }
};

// Value and kink signature of an untaped evaluation.
template <class Eval>
std::pair<double, std::vector<std::uint8_t>> probe(Eval&& eval) {
    KinkRecorder rec;
    const double v = eval();
    return {v, rec.signature()};
}

std::vector<double> uniform(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

GradcheckInput rand_input(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = shape_numel(shape);
    return {std::move(shape), uniform(rng, n, lo, hi)};
}

// Contracts an op's output with fixed random weights so every output
// element receives a distinct upstream gradient.
Tensor contract(const Tensor& t, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(t, Tensor(t.shape(), uniform(rng, t.numel(), -1.0, 1.0))));
}

// Camera-frame ray origins near the nominal head position and directions
// aimed at random screen points.
std::pair<GradcheckInput, GradcheckInput> gaze_rays(Rng& rng, std::size_t n, const CameraModel& cam,
                                                    const ScreenPlane& screen) {
    GradcheckInput o{{n, 3}, {}}, r{{n, 3}, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d origin(rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(450, 750));
        const Eigen::Vector3d target =
            screen_to_camera({rng.uniform(0, screen.width_mm), -rng.uniform(0, screen.height_mm), 0.0}, cam);
        const Eigen::Vector3d d = (target - origin).normalized();
        for (int k = 0; k < 3; ++k) {
            o.value.push_back(origin[k]);
            r.value.push_back(d[k]);
        }
    }
    return {o, r};
}

}  // namespace

GradcheckResult check_gradient(const std::string& name, const GradFn& f, const std::vector<GradcheckInput>& inputs,
                               const GradcheckOptions& opts) {
    Accumulator acc{opts, {}};
    acc.result.name = name;

    Tape tape;
    std::vector<Tensor> vars;
    for (const auto& in : inputs) vars.push_back(tape.variable(in.shape, in.value));
    const Tensor loss = f(vars);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& v : vars) analytic.push_back(tape.gradient(v));

    std::vector<std::vector<double>> values;
    for (const auto& in : inputs) values.push_back(in.value);
    auto eval = [&] {
        std::vector<Tensor> consts;
        for (std::size_t i = 0; i < inputs.size(); ++i) consts.emplace_back(inputs[i].shape, values[i]);
        return f(consts).item();
    };
    const auto base = probe(eval).second;

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t k = 0; k < values[i].size(); ++k) {
            const double x0 = values[i][k];
            values[i][k] = x0 + opts.eps;
            const auto plus = probe(eval);
            values[i][k] = x0 - opts.eps;
            const auto minus = probe(eval);
            values[i][k] = x0;
            if (plus.second != base || minus.second != base) {
                ++acc.result.skipped;
                continue;
            }
            acc.compare(analytic[i][k], plus.first, minus.first);
        }
    }
    return acc.finish();
}

std::vector<GradcheckResult> gradcheck_ops(const GradcheckOptions& opts) {
    Rng rng(derive_seed(opts.seed, 0x67726164));
    std::vector<GradcheckResult> out;
    auto run = [&](const std::string& name, std::vector<GradcheckInput> inputs, auto op) {
        const std::uint64_t wseed = rng.next();
        out.push_back(check_gradient(
            name, [&](const std::vector<Tensor>& v) { return contract(op(v), wseed); }, inputs, opts));
    };
    auto scalar_run = [&](const std::string& name, std::vector<GradcheckInput> inputs, auto op) {
        out.push_back(check_gradient(name, op, inputs, opts));
    };
    using V = std::vector<Tensor>;

    // Elementwise, including broadcasting in both directions.
    run("add", {rand_input(rng, {3, 4}), rand_input(rng, {3, 4})}, [](const V& v) { return add(v[0], v[1]); });
    run("add_broadcast", {rand_input(rng, {2, 3, 4}), rand_input(rng, {3, 1})},
        [](const V& v) { return add(v[0], v[1]); });
    run("sub", {rand_input(rng, {4}), rand_input(rng, {3, 4})}, [](const V& v) { return sub(v[0], v[1]); });
    run("mul", {rand_input(rng, {3, 4}), rand_input(rng, {1, 4})}, [](const V& v) { return mul(v[0], v[1]); });
    run("div", {rand_input(rng, {3, 4}), rand_input(rng, {3, 4}, 0.5, 2.0)},
        [](const V& v) { return div(v[0], v[1]); });
    run("neg", {rand_input(rng, {5})}, [](const V& v) { return neg(v[0]); });
    run("scale", {rand_input(rng, {5})}, [](const V& v) { return scale(v[0], -2.5); });
    run("add_scalar", {rand_input(rng, {5})}, [](const V& v) { return add_scalar(v[0], 3.0); });
    run("square", {rand_input(rng, {6})}, [](const V& v) { return square(v[0]); });
    run("sqrt", {rand_input(rng, {6}, 0.2, 3.0)}, [](const V& v) { return sqrt(v[0]); });
    run("abs", {rand_input(rng, {8})}, [](const V& v) { return abs(v[0]); });
    run("sin", {rand_input(rng, {6}, -3.0, 3.0)}, [](const V& v) { return sin(v[0]); });
    run("cos", {rand_input(rng, {6}, -3.0, 3.0)}, [](const V& v) { return cos(v[0]); });
    run("tanh", {rand_input(rng, {6}, -2.0, 2.0)}, [](const V& v) { return tanh(v[0]); });
    run("leaky_relu", {rand_input(rng, {12})}, [](const V& v) { return leaky_relu(v[0], 0.01); });
    run("clamp", {rand_input(rng, {12}, -2.0, 2.0)}, [](const V& v) { return clamp(v[0], -1.0, 1.0); });
    run("acos", {rand_input(rng, {8}, -0.95, 0.95)}, [](const V& v) { return acos(v[0]); });

    // Linear and spatial.
    run("matmul", {rand_input(rng, {3, 5}), rand_input(rng, {5, 4})}, [](const V& v) { return matmul(v[0], v[1]); });
    run("conv2d_3x3_s1", {rand_input(rng, {2, 3, 7, 6}), rand_input(rng, {4, 3, 3, 3}), rand_input(rng, {4})},
        [](const V& v) { return conv2d(v[0], v[1], v[2], 1, 1); });
    run("conv2d_3x3_s2", {rand_input(rng, {2, 3, 7, 6}), rand_input(rng, {5, 3, 3, 3}), rand_input(rng, {5})},
        [](const V& v) { return conv2d(v[0], v[1], v[2], 2, 1); });
    run("conv2d_wide", {rand_input(rng, {1, 48, 4, 3}), rand_input(rng, {2, 48, 3, 3}), rand_input(rng, {2})},
        [](const V& v) { return conv2d(v[0], v[1], v[2], 1, 1); });
    run("conv2d_1x1", {rand_input(rng, {2, 4, 3, 5}), rand_input(rng, {1, 4, 1, 1}), rand_input(rng, {1})},
        [](const V& v) { return conv2d(v[0], v[1], v[2], 1, 0); });
    run("upsample_nearest", {rand_input(rng, {2, 2, 3, 2})},
        [](const V& v) { return upsample_nearest(v[0], 5, 4); });
    run("upsample_conv", {rand_input(rng, {1, 2, 3, 4}), rand_input(rng, {3, 2, 3, 3}), rand_input(rng, {3})},
        [](const V& v) { return conv2d(upsample_nearest(v[0], 6, 8), v[1], v[2], 1, 1); });
    run("concat_channels", {rand_input(rng, {2, 1, 3, 3}), rand_input(rng, {2, 3, 3, 3})}, [](const V& v) {
        const Tensor parts[] = {v[0], v[1]};
        return concat_channels(parts);
    });
    run("spatial_softmax", {rand_input(rng, {2, 3, 4}, -2.0, 2.0)},
        [](const V& v) { return spatial_softmax(v[0], 0.7); });

    // Reductions and shape ops.
    run("sum", {rand_input(rng, {3, 4})}, [](const V& v) { return scale(sum(v[0]), 1.3); });
    run("mean", {rand_input(rng, {3, 4})}, [](const V& v) { return scale(mean(v[0]), 1.3); });
    run("sum_last", {rand_input(rng, {2, 3, 4})}, [](const V& v) { return sum_last(v[0], 2); });
    run("mean_last", {rand_input(rng, {2, 3, 4})}, [](const V& v) { return mean_last(v[0], 1); });
    run("dot_last", {rand_input(rng, {4, 3}), rand_input(rng, {4, 3})}, [](const V& v) { return dot_last(v[0], v[1]); });
    scalar_run("l1_norm", {rand_input(rng, {10})}, [](const V& v) { return l1_norm(v[0]); });
    scalar_run("squared_l2", {rand_input(rng, {10})}, [](const V& v) { return squared_l2(v[0]); });
    run("reshape", {rand_input(rng, {2, 6})}, [](const V& v) { return reshape(v[0], {3, 4}); });
    run("select_last", {rand_input(rng, {4, 3})}, [](const V& v) { return select_last(v[0], 1); });
    run("stack_last", {rand_input(rng, {4}), rand_input(rng, {4})}, [](const V& v) {
        const Tensor parts[] = {v[0], v[1]};
        return stack_last(parts);
    });
    run("slice_rows", {rand_input(rng, {5, 2})}, [](const V& v) { return slice_rows(v[0], 1, 4); });

    // Heatmap ops.
    run("soft_argmax", {rand_input(rng, {2, 5, 7}, -2.0, 2.0)},
        [](const V& v) { return soft_argmax(spatial_softmax(v[0])); });
    run("depth_readout", {rand_input(rng, {2, 4, 5}, -2.0, 2.0), rand_input(rng, {2, 4, 5}, 400.0, 800.0)},
        [](const V& v) { return depth_readout(spatial_softmax(v[0]), v[1]); });

    // Geometry ops.
    const CameraModel cam = default_camera();
    const ScreenPlane screen;
    run("spherical_to_vector", {rand_input(rng, {4, 2}, -1.0, 1.0)},
        [](const V& v) { return spherical_to_vector(v[0]); });
    {
        GradcheckInput a = rand_input(rng, {4, 3}), b = rand_input(rng, {4, 3});
        for (std::size_t i = 0; i < 12; ++i) b.value[i] = a.value[i] + 0.5 * b.value[i];
        run("angular_error", {a, b}, [](const V& v) { return angular_error(v[0], v[1]); });
    }
    run("unproject", {rand_input(rng, {3, 2}, 0.0, 60.0), rand_input(rng, {3}, 400.0, 800.0)},
        [&cam](const V& v) { return unproject(v[0], v[1], cam); });
    {
        GradcheckInput p = rand_input(rng, {3, 3}, -80.0, 80.0);
        for (std::size_t i = 0; i < 3; ++i) p.value[3 * i + 2] = rng.uniform(400.0, 800.0);
        run("project", {p}, [&cam](const V& v) { return project(v[0], cam); });
    }
    {
        auto [o, r] = gaze_rays(rng, 4, cam, screen);
        run("intersect_screen_px", {o, r},
            [&cam, &screen](const V& v) { return intersect_screen(v[0], v[1], cam, screen).px; });
        run("intersect_screen_mm", {o, r},
            [&cam, &screen](const V& v) { return intersect_screen(v[0], v[1], cam, screen).mm; });
    }
    return out;
}

GradcheckResult gradcheck_efe_loss(const GradcheckOptions& opts, std::size_t* params) {
    ModelConfig mc;
    mc.height = 9;
    mc.width = 16;
    mc.stem_channels = 4;
    mc.encoder_channels = {4, 6, 8, 8};
    mc.decoder_channels = {8, 6, 4, 4};
    mc.head_channels = 4;
    mc.mlp_hidden = 8;
    mc.param_cap = 10000;
    GazeModel model(Variant::Efe, mc, derive_seed(opts.seed, 1));
    if (params) *params = model.params().trainable_count();

    CameraModel cam = default_camera();
    const double s = 16.0 / static_cast<double>(cam.width);
    cam.fx *= s;
    cam.fy *= s;
    cam.cx = 7.5;
    cam.cy = 4.0;
    cam.width = 16;
    cam.height = 9;
    const ScreenPlane screen;
    const Dataset data = generate_dataset(SceneSpec{}, cam, screen, 3, derive_seed(opts.seed, 2));
    model.set_standardization(fit_standardization(data));
    const std::vector<std::size_t> idx{0, 1, 2};
    const Batch batch = make_batch(data, idx, mc.sigma(), true);
    const Standardization st = model.standardization();

    auto loss_of = [&](Tape* tape) {
        const ModelOutputs out = model.forward(batch.x, cam, screen, tape);
        return total_loss(Variant::Efe, out, batch, st, LossWeights{}, 1.0).total;
    };

    Accumulator acc{opts, {}};
    acc.result.name = "efe_total_loss";
    model.params().zero_grad();
    {
        Tape tape;
        tape.backward(loss_of(&tape));
    }
    const auto base = probe([&] { return loss_of(nullptr).item(); }).second;
    for (auto& p : model.params()) {
        if (!p->trainable) continue;
        for (std::size_t k = 0; k < p->value.size(); ++k) {
            const double x0 = p->value[k];
            p->value[k] = x0 + opts.eps;
            const auto plus = probe([&] { return loss_of(nullptr).item(); });
            p->value[k] = x0 - opts.eps;
            const auto minus = probe([&] { return loss_of(nullptr).item(); });
            p->value[k] = x0;
            if (plus.second != base || minus.second != base) {
                ++acc.result.skipped;
                continue;
            }
            acc.compare(p->grad[k], plus.first, minus.first);
        }
    }
    return acc.finish();
}

}  // namespace efe
