#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "efe/camera.hpp"
#include "efe/gaze_geom.hpp"
#include "efe/params.hpp"
#include "efe/tensor.hpp"

namespace efe {

enum class Variant {
    Efe,               // heatmap + sparse depth map origin, bottleneck direction
    DirectRegression,  // PoG regressed directly from the bottleneck
    SeparateModels,    // two networks: 3D origin regression, direction
    JointPrediction,   // shared encoder, origin and direction MLPs
    EfeNoDepthMap,     // EFE with depth from a bottleneck MLP
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
const std::array<Variant, 5>& all_variants();

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t height = 36;
    std::size_t width = 64;
    /// Fixed input normalization: x' = (x - input_mean) * input_scale.
    double input_mean = 0.4;
    double input_scale = 4.0;
    /// Width of a stride-1 full-resolution conv before the first stage;
    /// 0 feeds the input straight into the stages.
    std::size_t stem_channels = 16;
    /// One stage per entry, downsampling by 2.
    std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
    /// Convs per encoder stage: one stride-2 conv, then stride-1 convs.
    std::size_t convs_per_stage = 2;
    /// Decoder stage widths, deepest first; same length as the encoder.
    std::vector<std::size_t> decoder_channels{32, 16, 8, 4};
    /// Inner width of the residual heatmap/depth heads.
    std::size_t head_channels = 4;
    std::size_t mlp_hidden = 128;
    double softmax_temperature = 1.0;
    /// Ground-truth heatmap sigma in pixels; <= 0 selects 2% of the width.
    double heatmap_sigma = 0.0;
    std::size_t param_cap = 500000;

    double sigma() const;
    void validate() const;
};

/// Affine label standardization fitted on the training split. Networks
/// predict standardized quantities; the model maps them back to px / mm.
struct Standardization {
    std::array<double, 2> g_mean{0.0, 0.0};
    std::array<double, 2> g_std{1.0, 1.0};
    std::array<double, 3> o_mean{0.0, 0.0, 0.0};
    std::array<double, 3> o_std{1.0, 1.0, 1.0};
    std::array<double, 2> pog_mean{0.0, 0.0};
    std::array<double, 2> pog_std{1.0, 1.0};
    /// RMS angle (radians) of the label directions about their mean.
    std::array<double, 1> r_std{1.0};

    double z_mean() const { return o_mean[2]; }
    double z_std() const { return o_std[2]; }
};

/// Everything a forward pass produces. Tensors a variant does not compute
/// are left empty.
struct ModelOutputs {
    Tensor h_raw;   // N x H x W decoder logits
    Tensor h;       // N x H x W probability map
    Tensor d;       // N x H x W depth map (mm)
    Tensor g;       // N x 2 origin pixel
    Tensor z;       // N origin depth (mm)
    Tensor o;       // N x 3 origin, camera frame (mm)
    Tensor angles;  // N x 2 pitch, yaw
    Tensor r;       // N x 3 unit direction, camera frame
    PogBatch pog;   // screen mm / px, validity mask

    bool has_origin() const { return !o.empty(); }
    bool has_direction() const { return !r.empty(); }
};

class GazeModel {
public:
    GazeModel(Variant variant, ModelConfig config, std::uint64_t seed);
    ~GazeModel();
    GazeModel(GazeModel&&) noexcept;
    GazeModel& operator=(GazeModel&&) noexcept;

    Variant variant() const { return variant_; }
    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    Standardization standardization() const;
    void set_standardization(const Standardization& s);

    /// x: N x C x H x W. With a tape, every trainable parameter becomes a
    /// leaf on it; without one, the pass records nothing.
    ModelOutputs forward(const Tensor& x, const CameraModel& cam, const ScreenPlane& screen,
                         Tape* tape = nullptr);

    /// Tape-free forward pass. Reads parameters only, so concurrent calls
    /// on one model are safe.
    ModelOutputs infer(const Tensor& x, const CameraModel& cam, const ScreenPlane& screen) const;

    void save(const std::filesystem::path& path) const { save_checkpoint(params_, path); }
    void load(const std::filesystem::path& path) { load_checkpoint(params_, path); }

private:
    struct Layers;

    Variant variant_;
    ModelConfig config_;
    ParameterStore params_;
    std::unique_ptr<Layers> layers_;
};

}  // namespace efe
