#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "efe/model.hpp"
#include "efe/synth.hpp"

namespace efe {

struct EvalOptions {
    /// Clamp predicted PoG to the screen rectangle before measuring.
    bool clamp_pog = false;
    std::size_t batch_size = 64;
    /// Worker threads for the forward passes; 0 or 1 runs inline.
    std::size_t threads = 1;
};

/// One model prediction in dataset units. Components a variant does not
/// produce stay empty.
struct Prediction {
    std::optional<Eigen::Vector2d> g;
    std::optional<double> z;
    std::optional<Eigen::Vector3d> o;
    std::optional<Eigen::Vector3d> r;
    Eigen::Vector2d pog_px = Eigen::Vector2d::Zero();
    /// False when the ray missed the screen plane (parallel or behind).
    bool valid = true;
};

/// Per-sample errors. NaN marks a metric the variant does not produce or,
/// for PoG, a failed intersection.
struct SampleErrors {
    std::size_t index = 0;
    bool failed = false;
    double origin_mm = 0.0;
    double direction_deg = 0.0;
    double pog_px = 0.0;
    double pog_mm = 0.0;
    /// Predicted minus true PoG, px.
    Eigen::Vector2d residual_px = Eigen::Vector2d::Zero();
};

/// Means over the per-sample records. Failed samples are excluded from
/// the PoG means and counted in `failures`; origin and direction means use
/// every sample. A metric the model does not produce is nullopt.
struct EvalReport {
    std::string model_id;
    std::string dataset_id;
    std::size_t count = 0;
    std::size_t failures = 0;
    std::optional<double> origin_mm;
    std::optional<double> direction_deg;
    std::optional<double> pog_px;
    std::optional<double> pog_mm;
    std::vector<SampleErrors> samples;
};

/// Scores predictions against dataset labels.
EvalReport score_predictions(const Dataset& data, const std::vector<Prediction>& predictions,
                             const EvalOptions& opts = {});

/// Runs the model over the dataset (no tape) and returns its predictions.
std::vector<Prediction> predict(const GazeModel& model, const Dataset& data, const EvalOptions& opts = {});

/// predict + score. Throws when the dataset resolution differs from the
/// model's.
EvalReport evaluate(const GazeModel& model, const Dataset& data, const EvalOptions& opts = {});

/// Predictor that always answers the dataset's mean direction and mean
/// origin; a sanity upper bound for trained models.
std::vector<Prediction> mean_predictor(const Dataset& train, const Dataset& test);

// Per-sample CSV columns:
//   index,failed,origin_mm,direction_deg,pog_px,pog_mm,residual_x_px,residual_y_px
// Missing metrics are written as "nan".
void write_samples_csv(const EvalReport& report, const std::filesystem::path& path);
/// Aggregate JSON: {"model", "dataset", "count", "failures", "origin_mm",
/// "direction_deg", "pog_px", "pog_mm"}; absent metrics are null.
void write_report_json(const EvalReport& report, const std::filesystem::path& path);
std::string report_json(const EvalReport& report);

// ---------------------------------------------------------------------------

struct AblationRow {
    Variant variant;
    std::optional<double> origin_mm;
    std::optional<double> direction_deg;
    std::optional<double> pog_px;
};

/// Rows for each variant's report, in the given order. Direction and
/// origin cells of direct regression are absent.
std::vector<AblationRow> ablation_rows(const std::vector<std::pair<Variant, EvalReport>>& reports);
/// Fixed-width text table with "-" for absent cells.
std::string format_ablation_table(const std::vector<AblationRow>& rows);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Direction error (degrees) with models trained on camera `train` (row)
/// and tested on camera `test` (column). The diagonal is empty.
struct CrossCameraMatrix {
    std::vector<std::string> cameras;
    std::vector<std::vector<std::optional<double>>> cells;

    std::size_t filled() const;
    /// Mean over the filled cells.
    double off_diagonal_mean() const;
};

/// Direction error used for cross-camera cells. For models without a
/// direction output the implied direction, from the true origin to the
/// predicted PoG, is scored instead.
double cross_camera_direction_error(const Prediction& p, const GazeLabel& label, const CameraModel& cam,
                                    const ScreenPlane& screen);

/// Mean cross-camera direction error of predictions on one dataset.
double mean_cross_camera_error(const std::vector<Prediction>& predictions, const Dataset& data);

/// models[i] was trained on datasets' camera i; tests run on the other
/// cameras' test sets.
CrossCameraMatrix cross_camera_matrix(const std::vector<const GazeModel*>& models,
                                      const std::vector<const Dataset*>& tests, const EvalOptions& opts = {});
std::string format_cross_camera(const CrossCameraMatrix& m, const std::string& title);
void write_cross_camera_csv(const CrossCameraMatrix& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Square-binned 2D histogram of PoG residuals over [-extent, extent]^2 with
/// an odd bin count so that zero falls in the center bin. Residuals beyond
/// the extent go to the edge bins, so the total count always equals the
/// number of non-failed samples.
struct ResidualHistogram {
    std::size_t bins = 0;
    double extent = 0.0;
    /// counts[row][col]; row indexes dy ascending, col indexes dx ascending.
    std::vector<std::vector<std::size_t>> counts;

    double bin_width() const { return 2.0 * extent / static_cast<double>(bins); }
    std::size_t total() const;
    std::size_t bin_of(double v) const;
};

ResidualHistogram residual_histogram(const EvalReport& report, std::size_t bins = 41, double extent = 410.0);

// Histogram CSV: header rows "# bins,<n>", "# extent_px,<e>",
// "x_edges,<n+1 values>", "y_edges,<n+1 values>", then one row per dy bin
// (ascending): "<y_lo>,<counts...>".
void write_histogram_csv(const ResidualHistogram& h, const std::filesystem::path& path);

/// Writes depth_<i>.pgm and heatmap_<i>.pgm (with value-range sidecars) for
/// the first `count` samples. Needs a variant with heatmap and depth
/// outputs.
void dump_origin_maps(const GazeModel& model, const Dataset& data, std::size_t count,
                      const std::filesystem::path& dir);

}  // namespace efe
