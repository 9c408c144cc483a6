#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "efe/camera.hpp"
#include "efe/eval.hpp"
#include "efe/model.hpp"
#include "efe/synth.hpp"
#include "efe/training.hpp"

namespace efe {

struct DataConfig {
    std::size_t n = 6250;
    /// Contiguous index split; test takes the remainder.
    double train_fraction = 0.8;
    double val_fraction = 0.0;
    SceneSpec scene;
};

struct ReportConfig {
    std::size_t histogram_bins = 41;
    double histogram_extent_px = 410.0;
    /// Samples whose depth and heatmap images are dumped.
    std::size_t map_dumps = 4;
};

/// Everything a run depends on. Serialized next to every output so a run
/// can be repeated from its own config file.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string variant = "efe";
    /// One of the rig ids (MVC, W_C, W_L, W_R); intrinsics come from
    /// `camera`, extrinsics from the rig.
    std::string camera_id = "W_C";
    CameraModel camera;
    ScreenPlane screen;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalOptions eval;
    ReportConfig report;

    void validate() const;
    /// The configured camera with rig extrinsics.
    CameraModel resolved_camera() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);

/// Overlays the keys present in `j` onto `cfg`. Unknown keys throw with
/// their dotted path.
void merge_json(RunConfig& cfg, const nlohmann::json& j);

/// Defaults overlaid with a JSON config file.
RunConfig load_config(const std::filesystem::path& path);
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

/// First 16 hex digits of the FNV-1a hash of the canonical JSON form.
std::string config_hash(const RunConfig& cfg);

/// Model-init and shuffle seeds derived from the run seed.
std::uint64_t init_seed(const RunConfig& cfg);
std::uint64_t shuffle_seed(const RunConfig& cfg);

/// Environment variable naming the default parent of run directories.
inline constexpr const char* kRunDirEnv = "EFE_RUN_DIR";

/// <parent>/<UTC timestamp>_<config hash>, parent from EFE_RUN_DIR or
/// "runs". Not created.
std::filesystem::path default_run_dir(const RunConfig& cfg);

}  // namespace efe
