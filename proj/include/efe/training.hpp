#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "efe/model.hpp"
#include "efe/synth.hpp"

namespace efe {

struct LossWeights {
    double g = 2.0;
    double h = 1.0;
    double d = 1.0;
    double r = 1.0;
    double pog = 1.0;
};

struct TrainConfig {
    LossWeights weights;
    double lr = 3e-4;
    /// Learning rate at epoch e is lr * decay^e.
    double decay = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 8;
    /// The PoG term is switched off for this many epochs...
    std::size_t warmup_epochs_pog = 2;
    /// ...or, when set, for this many optimizer steps instead.
    std::optional<std::size_t> warmup_steps_pog;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Global gradient-norm clip; 0 disables clipping.
    double clip_norm = 10.0;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(std::size_t epoch) const;
    /// Step index of the first update that includes the PoG term.
    std::size_t pog_start_step(std::size_t steps_per_epoch) const;
};

/// Inputs and standardized-space labels for a set of samples.
struct Batch {
    std::vector<std::size_t> indices;
    Tensor x;       // N x C x H x W
    Tensor g;       // N x 2 px
    Tensor z;       // N mm
    Tensor o;       // N x 3 mm
    Tensor r;       // N x 3
    Tensor pog_px;  // N x 2
    Tensor h_gt;    // N x H x W Gaussian targets (only when requested)
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, double heatmap_sigma,
                 bool with_heatmaps = true);

/// Mean and (population) standard deviation of origin pixel, origin and
/// PoG pixel labels, plus the RMS angle of directions about their mean.
/// Degenerate spreads fall back to 1.
Standardization fit_standardization(const Dataset& data);

/// Weighted per-term contributions; total is their sum.
struct LossTerms {
    double g = 0.0;
    double h = 0.0;
    double d = 0.0;
    double r = 0.0;
    double pog = 0.0;
    double total = 0.0;
    double lambda_pog = 0.0;
};

struct LossResult {
    Tensor total;
    LossTerms terms;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::string term, const std::string& what) : std::runtime_error(what), term_(std::move(term)) {}
    const std::string& term() const { return term_; }

private:
    std::string term_;
};

/// Which terms a variant is trained with.
struct ActiveTerms {
    bool g, h, d, r, pog;
    /// False when the PoG term is the variant's only signal and so is not
    /// held back during warmup.
    bool pog_warmup;
};
ActiveTerms active_terms(Variant v);

/// L = lg*Lg + lh*Lh + ld*Ld + lr*Lr + lambda_pog*LPoG over standardized
/// quantities:
///   Lg   = mean ||(g - g^) / sd_g||^2
///   Lh   = mean over cells of (h - h^)^2, h the probability map
///   Ld   = mean |z - z^| / sd_z
///   Lr   = mean angle(r, r^) / sd_r, angles in radians
///   LPoG = mean ||(p - p^) / sd_p||^2 over rows with a valid intersection
/// `lambda_pog` replaces weights.pog (0 during warmup). Throws
/// NonFiniteLoss naming the first non-finite term.
LossResult total_loss(Variant variant, const ModelOutputs& out, const Batch& batch, const Standardization& st,
                      const LossWeights& weights, double lambda_pog);

/// AdamW with decoupled weight decay over the trainable parameters.
class AdamW {
public:
    AdamW(ParameterStore& params, double beta1, double beta2, double eps, double weight_decay);

    /// Applies one update from the gradients currently held in the store.
    void step(double lr);
    std::size_t steps() const { return t_; }

private:
    ParameterStore& params_;
    double beta1_, beta2_, eps_, wd_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Scales all trainable gradients so their global L2 norm is at most
/// max_norm (no-op for max_norm <= 0). Returns the norm before scaling.
double clip_grad_norm(ParameterStore& params, double max_norm);

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    LossTerms terms;
};

/// CSV header and row for the per-step metrics log. Term columns hold the
/// weighted contribution of each term.
std::string metrics_header();
std::string metrics_row(const StepRecord& rec);

struct TrainResult {
    std::vector<StepRecord> log;
    std::size_t steps = 0;
};

using ProgressFn = std::function<void(const StepRecord&, std::size_t steps_total)>;

/// Fits standardization on `data`, then runs cfg.epochs epochs of seeded
/// shuffled mini-batches. With a non-empty out_dir, writes metrics.csv,
/// checkpoints/epoch_<k>.ckpt after every epoch and model.ckpt at the end.
/// A non-finite loss aborts with NonFiniteLoss after writing
/// nonfinite_dump.txt (batch indices and term values) to out_dir.
TrainResult train(GazeModel& model, const Dataset& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

}  // namespace efe
