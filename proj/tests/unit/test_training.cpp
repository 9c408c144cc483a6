#include <doctest.h>

#include <cmath>
#include <numeric>

#include "efe/training.hpp"
#include "fixtures.hpp"

using namespace efe;

namespace {

double window_mean(const std::vector<StepRecord>& log, std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += log[i].terms.total;
    return s / static_cast<double>(end - begin);
}

Batch batch_of(const Dataset& data, std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return make_batch(data, idx, ModelConfig{}.sigma());
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("learning rate schedule") {
    TrainConfig tc;
    CHECK(tc.lr_at(0) == 3e-4);
    CHECK(tc.lr_at(3) == doctest::Approx(2.187e-4).epsilon(1e-12));
}

TEST_CASE("pog warmup boundary") {
    TrainConfig tc;
    CHECK(tc.pog_start_step(100) == 200);
    tc.warmup_steps_pog = 7;
    CHECK(tc.pog_start_step(100) == 7);
}

TEST_CASE("config validation") {
    TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS(tc.validate());
    tc = TrainConfig{};
    tc.lr = -1.0;
    CHECK_THROWS(tc.validate());
    tc = TrainConfig{};
    tc.weights.g = -1.0;
    CHECK_THROWS(tc.validate());
}

TEST_CASE("adamw matches a reference trace") {
    // Reference values from torch.optim.AdamW(lr=0.1, weight_decay=0.01).
    ParameterStore store;
    Parameter& p = store.add("p", {2}, {1.0, -2.0});
    AdamW opt(store, 0.9, 0.999, 1e-8, 0.01);
    const double grads[3][2] = {{0.5, -0.3}, {-0.3, 0.1}, {0.2, 0.0}};
    const double want[3][2] = {{0.899000002, -1.8980000033333333},
                               {0.8789511989397751, -1.8560801479247475},
                               {0.8433294795899422, -1.8232870578641782}};
    for (int s = 0; s < 3; ++s) {
        p.grad = {grads[s][0], grads[s][1]};
        opt.step(0.1);
        CHECK(std::abs(p.value[0] - want[s][0]) < 1e-12);
        CHECK(std::abs(p.value[1] - want[s][1]) < 1e-12);
    }
}

TEST_CASE("zero gradients without decay leave parameters alone") {
    ParameterStore store;
    Parameter& p = store.add("p", {3}, {0.5, -1.5, 2.0});
    Parameter& frozen = store.add("f", {1}, {4.0}, false);
    AdamW opt(store, 0.9, 0.999, 1e-8, 0.0);
    store.zero_grad();
    for (int s = 0; s < 10; ++s) opt.step(0.1);
    CHECK(p.value == std::vector<double>{0.5, -1.5, 2.0});
    CHECK(frozen.value[0] == 4.0);
}

TEST_CASE("gradient clipping") {
    ParameterStore store;
    Parameter& p = store.add("p", {2}, {0.0, 0.0});
    p.grad = {30.0, 40.0};
    CHECK(clip_grad_norm(store, 10.0) == doctest::Approx(50.0));
    CHECK(p.grad[0] == doctest::Approx(6.0));
    CHECK(p.grad[1] == doctest::Approx(8.0));
    p.grad = {3.0, 4.0};
    clip_grad_norm(store, 10.0);
    CHECK(p.grad[0] == 3.0);
}

TEST_CASE("active terms per variant") {
    const ActiveTerms direct = active_terms(Variant::DirectRegression);
    CHECK((!direct.g && !direct.h && !direct.d && !direct.r && direct.pog && !direct.pog_warmup));
    const ActiveTerms sep = active_terms(Variant::SeparateModels);
    CHECK((sep.g && sep.d && sep.r && !sep.h && !sep.pog));
    const ActiveTerms efe = active_terms(Variant::Efe);
    CHECK((efe.g && efe.h && efe.d && efe.r && efe.pog && efe.pog_warmup));
}

TEST_CASE("standardization fit") {
    const Standardization st = fit_standardization(smoke_data());
    CHECK(st.z_mean() > 400.0);
    CHECK(st.z_mean() < 800.0);
    CHECK(st.z_std() > 0.0);
    CHECK(st.r_std[0] > 0.0);
    CHECK(st.r_std[0] < 1.0);
}

TEST_CASE("loss terms scale with their weights") {
    const Dataset& data = smoke_data();
    GazeModel m(Variant::Efe, ModelConfig{}, 3);
    m.set_standardization(fit_standardization(data));
    const Batch b = batch_of(data, 4);
    ModelOutputs out = m.infer(b.x, data.camera, data.screen);
    const Standardization st = m.standardization();
    const LossWeights w;
    const LossResult base = total_loss(Variant::Efe, out, b, st, w, 1.0);
    CHECK(base.terms.total == doctest::Approx(base.terms.g + base.terms.h + base.terms.d + base.terms.r +
                                              base.terms.pog));

    // Shift the pixel prediction: L changes by exactly lambda_g * delta(L_g).
    ModelOutputs moved = out;
    std::vector<double> g(out.g.data().begin(), out.g.data().end());
    for (auto& v : g) v += 3.0;
    moved.g = Tensor(out.g.shape(), g);
    const LossResult shifted = total_loss(Variant::Efe, moved, b, st, w, 1.0);
    const double delta_lg = (shifted.terms.g - base.terms.g) / w.g;
    CHECK(delta_lg != 0.0);
    CHECK(shifted.terms.total - base.terms.total == doctest::Approx(2.0 * delta_lg).epsilon(1e-9));

    LossWeights doubled = w;
    doubled.g *= 2.0;
    const LossResult d = total_loss(Variant::Efe, out, b, st, doubled, 1.0);
    CHECK(d.terms.g == doctest::Approx(2.0 * base.terms.g));
    CHECK(d.terms.total - base.terms.total == doctest::Approx(base.terms.g));

    const LossResult warm = total_loss(Variant::Efe, out, b, st, w, 0.0);
    CHECK(warm.terms.pog == 0.0);
}

TEST_CASE("non-finite losses name the term") {
    const Dataset& data = smoke_data();
    GazeModel m(Variant::Efe, ModelConfig{}, 3);
    const Batch b = batch_of(data, 2);
    ModelOutputs out = m.infer(b.x, data.camera, data.screen);
    std::vector<double> z(out.z.data().begin(), out.z.data().end());
    z[0] = std::nan("");
    out.z = Tensor(out.z.shape(), z);
    try {
        total_loss(Variant::Efe, out, b, m.standardization(), LossWeights{}, 0.0);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(e.term() == "L_d");
    }
}

TEST_CASE("smoke run lowers the loss") {
    TrainConfig tc;
    tc.epochs = 2;
    tc.warmup_steps_pog = 1000;
    GazeModel m(Variant::Efe, ModelConfig{}, 8);
    const TrainResult res = train(m, smoke_data(), tc);
    REQUIRE(res.log.size() == 14);
    CHECK(window_mean(res.log, 11, 14) < window_mean(res.log, 0, 3));
}

TEST_CASE("smoothed loss halves over a longer run") {
    // Window-50 tripwire: catches a model that trains but barely moves.
    const Dataset data = generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 800, 23);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 1;
    tc.warmup_steps_pog = 100000;
    GazeModel m(Variant::Efe, ModelConfig{}, 9);
    const TrainResult res = train(m, data, tc);
    REQUIRE(res.log.size() == 100);
    const double first = window_mean(res.log, 0, 50);
    const double last = window_mean(res.log, 50, 100);
    MESSAGE("smoothed loss " << first << " -> " << last);
    CHECK(last < 0.5 * first);
}

TEST_CASE("seeded runs are bitwise identical") {
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16;
    tc.warmup_steps_pog = 4;
    tc.seed = 42;
    GazeModel a(Variant::Efe, ModelConfig{}, 10), b(Variant::Efe, ModelConfig{}, 10);
    const TrainResult ra = train(a, smoke_data(), tc);
    const TrainResult rb = train(b, smoke_data(), tc);
    REQUIRE(ra.log.size() == rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(metrics_row(ra.log[i]) == metrics_row(rb.log[i]));
    for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value == b.params()[i].value);
}

TEST_CASE("the pog term switches on at the warmup boundary") {
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16;
    tc.warmup_steps_pog = 5;
    GazeModel m(Variant::Efe, ModelConfig{}, 11);
    const TrainResult res = train(m, smoke_data(), tc);
    for (const auto& r : res.log) {
        if (r.step < 5) {
            CHECK(r.terms.pog == 0.0);
            CHECK(r.terms.lambda_pog == 0.0);
        } else {
            CHECK(r.terms.pog != 0.0);
        }
    }
    CHECK(metrics_header() == "step,epoch,lr,L_total,L_g,L_h,L_d,L_r,L_PoG,lambda_pog");
}

}  // TEST_SUITE
