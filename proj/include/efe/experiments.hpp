#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "efe/config.hpp"
#include "efe/eval.hpp"

namespace efe {

enum class Split { Train, Val, Test, All };
Split parse_split(const std::string& name);
std::string_view split_name(Split s);

/// The given split of `data` using the config's fractions.
Dataset select_split(const Dataset& data, const RunConfig& cfg, Split split);

/// Dataset for `cfg` (its camera, scene and seed), cfg.data.n samples.
Dataset generate_for(const RunConfig& cfg);

using LogFn = std::function<void(const std::string&)>;

/// Builds the configured variant, trains it on `train_data` and writes the
/// training artifacts (config.json, metrics.csv, checkpoints) to out_dir
/// when non-empty.
GazeModel train_variant(const RunConfig& cfg, Variant variant, const Dataset& train_data,
                        const std::filesystem::path& out_dir, const LogFn& log = {});

/// Rebuilds a model from a run directory holding config.json and
/// model.ckpt.
GazeModel load_run(const std::filesystem::path& run_dir, RunConfig* cfg_out = nullptr);

struct AblationResult {
    std::vector<std::pair<Variant, EvalReport>> reports;
    std::vector<AblationRow> rows;
};

/// Trains (or, with `from`, loads <from>/<variant>/model.ckpt) all five
/// variants with identical config and seed, evaluates each on `test`, and
/// writes per-variant reports plus ablation.csv / ablation.txt to out_dir.
AblationResult run_ablation(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                            const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& from,
                            const LogFn& log = {});

struct CrossCameraResult {
    std::vector<std::pair<Variant, CrossCameraMatrix>> matrices;
};

/// Renders the four-camera suite (cfg.data.n scenes), trains one model per
/// camera and variant on the train split, and fills each variant's matrix
/// from the other cameras' test splits. Writes cross_camera_<variant>.csv,
/// cross_camera.txt and comparison.csv to out_dir when non-empty.
CrossCameraResult run_cross_camera(const RunConfig& cfg, const std::vector<Variant>& variants,
                                   const std::filesystem::path& out_dir, const LogFn& log = {});

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace efe
