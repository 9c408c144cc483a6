#include "efe/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "efe/heatmap.hpp"
#include "efe/rng.hpp"

namespace efe {

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Efe: return "efe";
        case Variant::DirectRegression: return "direct-regression";
        case Variant::SeparateModels: return "separate-models";
        case Variant::JointPrediction: return "joint-prediction";
        case Variant::EfeNoDepthMap: return "efe-no-depthmap";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    for (Variant v : all_variants()) {
        if (variant_name(v) == name) return v;
    }
    throw std::invalid_argument("unknown model variant '" + std::string(name) + "'");
}

const std::array<Variant, 5>& all_variants() {
    static const std::array<Variant, 5> kAll{Variant::DirectRegression, Variant::SeparateModels,
                                             Variant::JointPrediction, Variant::EfeNoDepthMap, Variant::Efe};
    return kAll;
}

double ModelConfig::sigma() const {
    return heatmap_sigma > 0.0 ? heatmap_sigma : default_heatmap_sigma(width);
}

void ModelConfig::validate() const {
    if (in_channels == 0 || height == 0 || width == 0) throw std::invalid_argument("model: empty input size");
    if (encoder_channels.empty() || encoder_channels.size() != decoder_channels.size()) {
        throw std::invalid_argument("model: encoder and decoder need the same, non-zero number of stages");
    }
    if (convs_per_stage == 0) throw std::invalid_argument("model: convs_per_stage must be >= 1");
    if (!(input_scale > 0.0)) throw std::invalid_argument("model: input_scale must be > 0");
    if (head_channels == 0 || mlp_hidden == 0) throw std::invalid_argument("model: zero-width head");
    if (!(softmax_temperature > 0.0)) throw std::invalid_argument("model: softmax temperature must be > 0");
}

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    // Uniform fan-in scaling for leaky-relu layers.
    std::vector<double> kaiming(std::size_t count, std::size_t fan_in, double gain = 1.0) {
        const double bound = gain * std::sqrt(6.0 / (1.0001 * static_cast<double>(fan_in)));
        std::vector<double> v(count);
        for (auto& x : v) x = rng_.uniform(-bound, bound);
        return v;
    }

private:
    Rng rng_;
};

struct Conv {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    std::size_t stride = 1;
    std::size_t pad = 1;

    Conv() = default;
    Conv(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in, std::size_t out,
         std::size_t k, std::size_t stride_, double gain = 1.0)
        : stride(stride_), pad(k / 2) {
        w = &ps.add(name + ".w", {out, in, k, k}, init.kaiming(out * in * k * k, in * k * k, gain));
        b = &ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
    }

    Tensor operator()(Binding& bind, const Tensor& x) const {
        return conv2d(x, bind(*w), bind(*b), stride, pad);
    }
};

struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    Linear(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in, std::size_t out,
           double gain = 1.0) {
        w = &ps.add(name + ".w", {in, out}, init.kaiming(in * out, in, gain));
        b = &ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
    }

    Tensor operator()(Binding& bind, const Tensor& x) const { return add(matmul(x, bind(*w)), bind(*b)); }
};

// Two hidden leaky-relu layers, linear output. The output layer starts small
// so initial predictions sit near the standardized mean.
struct Mlp {
    std::vector<Linear> layers;

    Mlp(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in, std::size_t hidden,
        std::size_t out) {
        layers.emplace_back(ps, init, name + ".0", in, hidden);
        layers.emplace_back(ps, init, name + ".1", hidden, hidden);
        layers.emplace_back(ps, init, name + ".2", hidden, out, 0.1);
    }

    Tensor operator()(Binding& bind, Tensor x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](bind, x);
            if (i + 1 < layers.size()) x = leaky_relu(x);
        }
        return x;
    }
};

struct EncoderFeatures {
    Tensor full;                // full-resolution skip: stem output or the input
    std::vector<Tensor> stages; // one per stride-2 stage, shallowest first
};

// Optional full-resolution stem, then stages of one stride-2 conv followed
// by (convs_per_stage - 1) stride-1 convs.
struct Encoder {
    std::optional<Conv> stem;
    std::vector<std::vector<Conv>> stages;

    Encoder(ParameterStore& ps, Initializer& init, const std::string& name, const ModelConfig& cfg) {
        std::size_t in = cfg.in_channels;
        if (cfg.stem_channels > 0) {
            stem.emplace(ps, init, name + ".stem", in, cfg.stem_channels, 3, 1);
            in = cfg.stem_channels;
        }
        for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
            const std::size_t out = cfg.encoder_channels[i];
            std::vector<Conv> convs;
            for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) {
                convs.emplace_back(ps, init, name + "." + std::to_string(i) + (j ? "." + std::to_string(j) : ""),
                                   j ? out : in, out, 3, j ? 1 : 2);
            }
            stages.push_back(std::move(convs));
            in = out;
        }
    }

    EncoderFeatures operator()(Binding& bind, const Tensor& x) const {
        EncoderFeatures f;
        f.full = stem ? leaky_relu((*stem)(bind, x)) : x;
        Tensor h = f.full;
        for (const auto& convs : stages) {
            for (const auto& c : convs) h = leaky_relu(c(bind, h));
            f.stages.push_back(h);
        }
        return f;
    }
};

// Nearest upsampling to the next skip's size, concatenation, 3x3 conv.
struct Decoder {
    std::vector<Conv> stages;

    Decoder(ParameterStore& ps, Initializer& init, const std::string& name, const ModelConfig& cfg) {
        const auto& enc = cfg.encoder_channels;
        const auto& dec = cfg.decoder_channels;
        std::size_t below = enc.back();
        for (std::size_t i = 0; i < dec.size(); ++i) {
            // Stage i joins the skip at encoder depth (S - 2 - i); the last
            // stage joins the input image itself.
            const std::size_t skip_index = enc.size() - 1 - i;
            const std::size_t full = cfg.stem_channels > 0 ? cfg.stem_channels : cfg.in_channels;
            const std::size_t skip = skip_index == 0 ? full : enc[skip_index - 1];
            stages.emplace_back(ps, init, name + "." + std::to_string(i), below + skip, dec[i], 3, 1);
            below = dec[i];
        }
    }

    Tensor operator()(Binding& bind, const EncoderFeatures& f) const {
        Tensor h = f.stages.back();
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::size_t skip_index = f.stages.size() - 1 - i;
            const Tensor& skip = skip_index == 0 ? f.full : f.stages[skip_index - 1];
            const Tensor parts[] = {upsample_nearest(h, skip.dim(2), skip.dim(3)), skip};
            h = leaky_relu(stages[i](bind, concat_channels(parts)));
        }
        return h;
    }
};

// Residual block of two 3x3 convs, then a 1x1 projection to one map.
struct ResidualHead {
    Conv c1, c2, out;

    ResidualHead(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in,
                 std::size_t inner)
        : c1(ps, init, name + ".c1", in, inner, 3, 1),
          c2(ps, init, name + ".c2", inner, in, 3, 1),
          out(ps, init, name + ".out", in, 1, 1, 1, 0.1) {}

    Tensor operator()(Binding& bind, const Tensor& u) const {
        const Tensor t = c2(bind, leaky_relu(c1(bind, u)));
        const Tensor y = leaky_relu(add(u, t));
        const Tensor m = out(bind, y);
        return reshape(m, {m.dim(0), m.dim(2), m.dim(3)});
    }
};

Tensor affine_rows(const Tensor& t, std::span<const double> scale_by, std::span<const double> shift) {
    const Tensor s({scale_by.size()}, std::vector<double>(scale_by.begin(), scale_by.end()));
    const Tensor b({shift.size()}, std::vector<double>(shift.begin(), shift.end()));
    return add(mul(t, s), b);
}

}  // namespace

struct GazeModel::Layers {
    std::optional<Encoder> encoder;
    std::optional<Encoder> encoder_b;  // separate-models direction network
    std::optional<Decoder> decoder;
    std::optional<ResidualHead> head_h;
    std::optional<ResidualHead> head_d;
    std::optional<Mlp> mlp_dir;
    std::optional<Mlp> mlp_origin;
    std::optional<Mlp> mlp_z;
    std::optional<Mlp> mlp_pog;
};

GazeModel::GazeModel(Variant variant, ModelConfig config, std::uint64_t seed)
    : variant_(variant), config_(std::move(config)), layers_(std::make_unique<Layers>()) {
    config_.validate();
    Initializer init(seed);
    auto& L = *layers_;
    auto& ps = params_;
    const std::size_t bottleneck = config_.encoder_channels.back();
    const std::size_t hidden = config_.mlp_hidden;
    switch (variant_) {
        case Variant::Efe:
        case Variant::EfeNoDepthMap:
            L.encoder.emplace(ps, init, "enc", config_);
            L.decoder.emplace(ps, init, "dec", config_);
            L.head_h.emplace(ps, init, "head_h", config_.decoder_channels.back(), config_.head_channels);
            if (variant_ == Variant::Efe) {
                L.head_d.emplace(ps, init, "head_d", config_.decoder_channels.back(), config_.head_channels);
            } else {
                L.mlp_z.emplace(ps, init, "mlp_z", bottleneck, hidden, 1);
            }
            L.mlp_dir.emplace(ps, init, "mlp_dir", bottleneck, hidden, 2);
            break;
        case Variant::DirectRegression:
            L.encoder.emplace(ps, init, "enc", config_);
            L.mlp_pog.emplace(ps, init, "mlp_pog", bottleneck, hidden, 2);
            break;
        case Variant::SeparateModels:
            L.encoder.emplace(ps, init, "origin_net.enc", config_);
            L.mlp_origin.emplace(ps, init, "origin_net.mlp", bottleneck, hidden, 3);
            L.encoder_b.emplace(ps, init, "direction_net.enc", config_);
            L.mlp_dir.emplace(ps, init, "direction_net.mlp", bottleneck, hidden, 2);
            break;
        case Variant::JointPrediction:
            L.encoder.emplace(ps, init, "enc", config_);
            L.mlp_origin.emplace(ps, init, "mlp_origin", bottleneck, hidden, 3);
            L.mlp_dir.emplace(ps, init, "mlp_dir", bottleneck, hidden, 2);
            break;
    }
    const Standardization identity;
    ps.add("stats.g_mean", {2}, {identity.g_mean.begin(), identity.g_mean.end()}, false);
    ps.add("stats.g_std", {2}, {identity.g_std.begin(), identity.g_std.end()}, false);
    ps.add("stats.o_mean", {3}, {identity.o_mean.begin(), identity.o_mean.end()}, false);
    ps.add("stats.o_std", {3}, {identity.o_std.begin(), identity.o_std.end()}, false);
    ps.add("stats.pog_mean", {2}, {identity.pog_mean.begin(), identity.pog_mean.end()}, false);
    ps.add("stats.pog_std", {2}, {identity.pog_std.begin(), identity.pog_std.end()}, false);
    ps.add("stats.r_std", {1}, {identity.r_std.begin(), identity.r_std.end()}, false);

    // The cap applies per network; separate-models holds two.
    std::size_t largest = params_.trainable_count();
    if (variant_ == Variant::SeparateModels) {
        std::size_t origin = 0;
        for (const auto& p : params_) {
            if (p->trainable && p->name.rfind("origin_net.", 0) == 0) origin += p->value.size();
        }
        largest = std::max(origin, params_.trainable_count() - origin);
    }
    if (largest > config_.param_cap) {
        throw std::invalid_argument("model '" + std::string(variant_name(variant_)) + "' has " +
                                    std::to_string(largest) + " parameters in one network, above the cap of " +
                                    std::to_string(config_.param_cap));
    }
}

GazeModel::~GazeModel() = default;
GazeModel::GazeModel(GazeModel&&) noexcept = default;
GazeModel& GazeModel::operator=(GazeModel&&) noexcept = default;

Standardization GazeModel::standardization() const {
    Standardization s;
    auto copy = [this](const char* name, auto& dst) {
        const auto& v = params_.get(name).value;
        std::copy(v.begin(), v.end(), dst.begin());
    };
    copy("stats.g_mean", s.g_mean);
    copy("stats.g_std", s.g_std);
    copy("stats.o_mean", s.o_mean);
    copy("stats.o_std", s.o_std);
    copy("stats.pog_mean", s.pog_mean);
    copy("stats.pog_std", s.pog_std);
    copy("stats.r_std", s.r_std);
    return s;
}

void GazeModel::set_standardization(const Standardization& s) {
    auto put = [this](const char* name, const auto& src) {
        params_.get(name).value.assign(src.begin(), src.end());
    };
    put("stats.g_mean", s.g_mean);
    put("stats.g_std", s.g_std);
    put("stats.o_mean", s.o_mean);
    put("stats.o_std", s.o_std);
    put("stats.pog_mean", s.pog_mean);
    put("stats.pog_std", s.pog_std);
    put("stats.r_std", s.r_std);
}

ModelOutputs GazeModel::infer(const Tensor& x, const CameraModel& cam, const ScreenPlane& screen) const {
    // Without a tape, forward only copies parameter values.
    return const_cast<GazeModel*>(this)->forward(x, cam, screen, nullptr);
}

ModelOutputs GazeModel::forward(const Tensor& x, const CameraModel& cam, const ScreenPlane& screen, Tape* tape) {
    const Shape expected{x.rank() == 4 ? x.dim(0) : 0, config_.in_channels, config_.height, config_.width};
    if (x.shape() != expected) {
        throw ShapeError("model forward: input " + shape_str(x.shape()) + " does not match configured " +
                         shape_str({config_.in_channels, config_.height, config_.width}));
    }
    const std::size_t n = x.dim(0);
    const Standardization st = standardization();
    const auto& L = *layers_;
    Binding bind(tape);
    ModelOutputs out;

    const Tensor xn = scale(add_scalar(x, -config_.input_mean), config_.input_scale);
    const auto features = (*L.encoder)(bind, xn);
    const Tensor pooled = mean_last(features.stages.back(), 2);

    switch (variant_) {
        case Variant::Efe:
        case Variant::EfeNoDepthMap: {
            const Tensor u = (*L.decoder)(bind, features);
            out.h_raw = (*L.head_h)(bind, u);
            out.h = spatial_softmax(out.h_raw, config_.softmax_temperature);
            out.g = soft_argmax(out.h);
            if (variant_ == Variant::Efe) {
                const Tensor d_std = (*L.head_d)(bind, u);
                out.d = add_scalar(scale(d_std, st.z_std()), st.z_mean());
                out.z = depth_readout(out.h, out.d);
            } else {
                const Tensor z_std = reshape((*L.mlp_z)(bind, pooled), {n});
                out.z = add_scalar(scale(z_std, st.z_std()), st.z_mean());
            }
            out.o = unproject(out.g, out.z, cam);
            out.angles = (*L.mlp_dir)(bind, pooled);
            break;
        }
        case Variant::DirectRegression: {
            const Tensor p_std = (*L.mlp_pog)(bind, pooled);
            out.pog.px = affine_rows(p_std, st.pog_std, st.pog_mean);
            const std::array<double, 2> to_mm{1.0 / screen.px_per_mm_x(), -1.0 / screen.px_per_mm_y()};
            const std::array<double, 2> shift{-screen.origin_px.x() * to_mm[0], -screen.origin_px.y() * to_mm[1]};
            out.pog.mm = affine_rows(out.pog.px, to_mm, shift);
            out.pog.valid.assign(n, 1);
            return out;
        }
        case Variant::SeparateModels:
        case Variant::JointPrediction: {
            out.o = affine_rows((*L.mlp_origin)(bind, pooled), st.o_std, st.o_mean);
            out.z = select_last(out.o, 2);
            out.g = project(out.o, cam);
            if (variant_ == Variant::SeparateModels) {
                const auto features_b = (*L.encoder_b)(bind, xn);
                out.angles = (*L.mlp_dir)(bind, mean_last(features_b.stages.back(), 2));
            } else {
                out.angles = (*L.mlp_dir)(bind, pooled);
            }
            break;
        }
    }
    out.r = spherical_to_vector(out.angles);
    out.pog = intersect_screen(out.o, out.r, cam, screen);
    return out;
}

}  // namespace efe
