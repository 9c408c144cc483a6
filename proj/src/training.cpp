#include "efe/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "efe/gaze_geom.hpp"
#include "efe/heatmap.hpp"

namespace efe {

void TrainConfig::validate() const {
    for (double w : {weights.g, weights.h, weights.d, weights.r, weights.pog}) {
        if (!(w >= 0.0)) throw std::invalid_argument("train config: loss weights must be >= 0");
    }
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("train config: decay must be in (0, 1]");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train config: betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam_eps must be > 0");
    if (!(clip_norm >= 0.0)) throw std::invalid_argument("train config: clip_norm must be >= 0");
}

double TrainConfig::lr_at(std::size_t epoch) const { return lr * std::pow(decay, static_cast<double>(epoch)); }

std::size_t TrainConfig::pog_start_step(std::size_t steps_per_epoch) const {
    return warmup_steps_pog ? *warmup_steps_pog : warmup_epochs_pog * steps_per_epoch;
}

// ---------------------------------------------------------------------------

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, double heatmap_sigma,
                 bool with_heatmaps) {
    const std::size_t n = indices.size();
    const std::size_t c = data.channels, h = data.height, w = data.width;
    const std::size_t pixels = c * h * w;
    std::vector<double> x(n * pixels), g(n * 2), z(n), o(n * 3), r(n * 3), p(n * 2);
    std::vector<double> hm(with_heatmaps ? n * h * w : 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data.samples.at(indices[i]);
        std::copy(s.frame.pixels.begin(), s.frame.pixels.end(), x.begin() + static_cast<std::ptrdiff_t>(i * pixels));
        const auto& l = s.label;
        g[2 * i] = l.g.x();
        g[2 * i + 1] = l.g.y();
        z[i] = l.z;
        for (int k = 0; k < 3; ++k) {
            o[3 * i + k] = l.o[k];
            r[3 * i + k] = l.r[k];
        }
        p[2 * i] = l.pog_px.x();
        p[2 * i + 1] = l.pog_px.y();
        if (with_heatmaps) {
            const Tensor t = make_gt_heatmap(l.g, heatmap_sigma, h, w);
            std::copy(t.data().begin(), t.data().end(), hm.begin() + static_cast<std::ptrdiff_t>(i * h * w));
        }
    }
    Batch b;
    b.indices.assign(indices.begin(), indices.end());
    b.x = Tensor({n, c, h, w}, std::move(x));
    b.g = Tensor({n, 2}, std::move(g));
    b.z = Tensor({n}, std::move(z));
    b.o = Tensor({n, 3}, std::move(o));
    b.r = Tensor({n, 3}, std::move(r));
    b.pog_px = Tensor({n, 2}, std::move(p));
    if (with_heatmaps) b.h_gt = Tensor({n, h, w}, std::move(hm));
    return b;
}

Standardization fit_standardization(const Dataset& data) {
    if (data.samples.empty()) throw std::invalid_argument("fit_standardization: empty dataset");
    const double n = static_cast<double>(data.size());
    auto fit = [&](auto get, auto& mean, auto& sd) {
        for (std::size_t k = 0; k < mean.size(); ++k) {
            double m = 0.0;
            for (const auto& s : data.samples) m += get(s.label)[k];
            m /= n;
            double v = 0.0;
            for (const auto& s : data.samples) {
                const double d = get(s.label)[k] - m;
                v += d * d;
            }
            const double sdv = std::sqrt(v / n);
            mean[k] = m;
            sd[k] = sdv > 1e-6 ? sdv : 1.0;
        }
    };
    Standardization st;
    fit([](const GazeLabel& l) { return l.g; }, st.g_mean, st.g_std);
    fit([](const GazeLabel& l) { return l.o; }, st.o_mean, st.o_std);
    fit([](const GazeLabel& l) { return l.pog_px; }, st.pog_mean, st.pog_std);
    Eigen::Vector3d mean_dir = Eigen::Vector3d::Zero();
    for (const auto& s : data.samples) mean_dir += s.label.r;
    double sq = 0.0;
    if (mean_dir.norm() > 0.0) {
        for (const auto& s : data.samples) {
            const double a = angular_error(s.label.r, mean_dir);
            sq += a * a;
        }
    }
    const double rms = std::sqrt(sq / n);
    st.r_std[0] = rms > 1e-6 ? rms : 1.0;
    return st;
}

// ---------------------------------------------------------------------------

ActiveTerms active_terms(Variant v) {
    switch (v) {
        case Variant::Efe:
        case Variant::EfeNoDepthMap: return {true, true, true, true, true, true};
        case Variant::DirectRegression: return {false, false, false, false, true, false};
        case Variant::SeparateModels: return {true, false, true, true, false, true};
        case Variant::JointPrediction: return {true, false, true, true, true, true};
    }
    return {};
}

namespace {

Tensor row_vector(std::span<const double> v) { return Tensor({v.size()}, {v.begin(), v.end()}); }

Tensor standardize(const Tensor& t, std::span<const double> mean, std::span<const double> sd) {
    std::vector<double> inv(sd.size());
    for (std::size_t i = 0; i < sd.size(); ++i) inv[i] = 1.0 / sd[i];
    return mul(sub(t, row_vector(mean)), row_vector(inv));
}

void check_finite(const char* name, double value, const LossTerms& terms) {
    if (std::isfinite(value)) return;
    std::ostringstream os;
    os << "non-finite loss term " << name << " = " << value << " (g=" << terms.g << ", h=" << terms.h
       << ", d=" << terms.d << ", r=" << terms.r << ", pog=" << terms.pog << ")";
    throw NonFiniteLoss(name, os.str());
}

}  // namespace

LossResult total_loss(Variant variant, const ModelOutputs& out, const Batch& batch, const Standardization& st,
                      const LossWeights& weights, double lambda_pog) {
    const ActiveTerms on = active_terms(variant);
    const std::size_t n = batch.x.dim(0);
    const double inv_n = 1.0 / static_cast<double>(n);
    LossResult res;
    res.terms.lambda_pog = on.pog ? lambda_pog : 0.0;
    std::vector<Tensor> parts;

    auto add_term = [&](const char* name, double weight, const Tensor& raw, double& slot) {
        if (weight == 0.0) return;
        const Tensor weighted = scale(raw, weight);
        slot = weighted.item();
        check_finite(name, slot, res.terms);
        parts.push_back(weighted);
    };

    if (on.g || on.d || on.h) {
        const Tensor g_s = standardize(out.g, st.g_mean, st.g_std);
        const Tensor g_gt = standardize(batch.g, st.g_mean, st.g_std);
        const Tensor z_s = scale(add_scalar(out.z, -st.z_mean()), 1.0 / st.z_std());
        const Tensor z_gt = scale(add_scalar(batch.z, -st.z_mean()), 1.0 / st.z_std());
        if (on.h) {
            const OriginLosses ol = origin_losses(out.h, batch.h_gt, g_s, g_gt, z_s, z_gt);
            add_term("L_h", weights.h, ol.heatmap, res.terms.h);
            add_term("L_g", weights.g, ol.g, res.terms.g);
            add_term("L_d", weights.d, ol.d, res.terms.d);
        } else {
            add_term("L_g", weights.g, scale(squared_l2(sub(g_s, g_gt)), inv_n), res.terms.g);
            add_term("L_d", weights.d, scale(l1_norm(sub(z_s, z_gt)), inv_n), res.terms.d);
        }
    }
    if (on.r) add_term("L_r", weights.r, scale(mean(angular_error(out.r, batch.r)), 1.0 / st.r_std[0]), res.terms.r);
    if (on.pog && res.terms.lambda_pog != 0.0) {
        std::vector<double> mask(n);
        for (std::size_t i = 0; i < n; ++i) mask[i] = out.pog.valid[i] ? 1.0 : 0.0;
        const std::array<double, 2> zero{0.0, 0.0};
        const Tensor diff = mul(standardize(sub(out.pog.px, batch.pog_px), zero, st.pog_std),
                                Tensor({n, 1}, std::move(mask)));
        add_term("L_PoG", res.terms.lambda_pog, scale(squared_l2(diff), inv_n), res.terms.pog);
    }
    if (parts.empty()) {
        res.total = Tensor::scalar(0.0);
        return res;
    }
    Tensor total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    res.total = total;
    res.terms.total = total.item();
    check_finite("L_total", res.terms.total, res.terms);
    return res;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(ParameterStore& params, double beta1, double beta2, double eps, double weight_decay)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& p : params_) {
        m_.emplace_back(p->trainable ? p->value.size() : 0, 0.0);
        v_.emplace_back(p->trainable ? p->value.size() : 0, 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = params_[i];
        if (!p.trainable) continue;
        if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
        if (p.grad.size() != p.value.size() || m_[i].size() != p.value.size()) {
            throw ShapeError("adamw: gradient of '" + p.name + "' has " + std::to_string(p.grad.size()) +
                             " values, parameter has " + std::to_string(p.value.size()));
        }
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            p.value[k] -= lr * wd_ * p.value[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            p.value[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
        }
    }
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p->trainable) continue;
        for (double g : p->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& p : params) {
            if (!p->trainable) continue;
            for (double& g : p->grad) g *= f;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------

std::string metrics_header() { return "step,epoch,lr,L_total,L_g,L_h,L_d,L_r,L_PoG,lambda_pog"; }

std::string metrics_row(const StepRecord& rec) {
    char buf[512];
    const auto& t = rec.terms;
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", rec.step, rec.epoch,
                  rec.lr, t.total, t.g, t.h, t.d, t.r, t.pog, t.lambda_pog);
    return buf;
}

namespace {

void write_dump(const std::filesystem::path& dir, const StepRecord& rec, const Batch& batch, const NonFiniteLoss& e) {
    if (dir.empty()) return;
    std::ofstream out(dir / "nonfinite_dump.txt");
    out << "error: " << e.what() << "\nterm: " << e.term() << "\nstep: " << rec.step << "\nepoch: " << rec.epoch
        << "\nbatch_indices:";
    for (auto i : batch.indices) out << ' ' << i;
    out << '\n';
}

}  // namespace

TrainResult train(GazeModel& model, const Dataset& data, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const ProgressFn& progress) {
    cfg.validate();
    if (data.samples.empty()) throw std::invalid_argument("train: dataset is empty");
    const auto& mc = model.config();
    if (data.channels != mc.in_channels || data.height != mc.height || data.width != mc.width) {
        throw std::invalid_argument("train: dataset resolution " + std::to_string(data.width) + "x" +
                                    std::to_string(data.height) + " does not match the model's " +
                                    std::to_string(mc.width) + "x" + std::to_string(mc.height));
    }
    model.set_standardization(fit_standardization(data));
    const Standardization st = model.standardization();
    const ActiveTerms on = active_terms(model.variant());

    std::ofstream metrics;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir / "checkpoints");
        metrics.open(out_dir / "metrics.csv", std::ios::trunc);
        if (!metrics) throw std::runtime_error("train: cannot write '" + (out_dir / "metrics.csv").string() + "'");
        metrics << metrics_header() << '\n';
    }

    const std::size_t n = data.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    const std::size_t pog_start = on.pog_warmup ? cfg.pog_start_step(steps_per_epoch) : 0;
    AdamW opt(model.params(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    TrainResult result;
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, epoch));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        const double lr = cfg.lr_at(epoch);

        for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const std::span<const std::size_t> idx(order.data() + b0, std::min(cfg.batch_size, n - b0));
            const Batch batch = make_batch(data, idx, mc.sigma(), on.h);
            StepRecord rec;
            rec.step = result.steps;
            rec.epoch = epoch;
            rec.lr = lr;
            const double lambda_pog = rec.step >= pog_start ? cfg.weights.pog : 0.0;

            model.params().zero_grad();
            Tape tape;
            const ModelOutputs out = model.forward(batch.x, data.camera, data.screen, &tape);
            LossResult loss;
            try {
                loss = total_loss(model.variant(), out, batch, st, cfg.weights, lambda_pog);
            } catch (const NonFiniteLoss& e) {
                write_dump(out_dir, rec, batch, e);
                throw;
            }
            rec.terms = loss.terms;
            if (loss.total.tracked()) {
                tape.backward(loss.total);
                clip_grad_norm(model.params(), cfg.clip_norm);
            }
            opt.step(lr);
            ++result.steps;
            if (metrics.is_open()) metrics << metrics_row(rec) << '\n';
            if (progress) progress(rec, total_steps);
            result.log.push_back(rec);
        }
        if (!out_dir.empty()) {
            metrics.flush();
            model.save(out_dir / "checkpoints" / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"));
        }
    }
    if (!out_dir.empty()) model.save(out_dir / "model.ckpt");
    return result;
}

}  // namespace efe
