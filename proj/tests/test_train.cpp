#include <doctest.h>

#include "aanreg/ops.hpp"
#include "aanreg/register.hpp"
#include "aanreg/synth.hpp"
#include "aanreg/train.hpp"
#include "support.hpp"

#include <cmath>
#include <sstream>

using namespace aanreg;

namespace {

TrainConfig tiny_config(int iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.lr = 1e-3;
    c.aan_arch = {2, 2, 3, 1, 0.2};
    c.dlr_arch = {2, 2, 2, 3, 0.2};
    c.loss.mu_smooth = 0.1;
    return c;
}

std::vector<TrainingSample> tiny_dataset(std::size_t pairs, std::uint64_t seed) {
    synth::PairSpec spec;
    spec.phantom.dims = {16, 16, 16};
    spec.control_spacing = 6;
    spec.deform_amplitude = 1.5;
    std::vector<Volume> vols;
    for (const auto& p : synth::generate_pairs(pairs, seed, spec)) {
        vols.push_back(p.fixed);
        vols.push_back(p.moving);
    }
    return make_dataset(vols, CannyParams{});
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters but counts the step") {
    std::vector<nn::Var> p{nn::parameter({3}, {1, 2, 3})};
    AdamState s;
    adam_step(p, s);
    CHECK(p[0]->value == std::vector<double>{1, 2, 3});
    CHECK(s.step == 1);
}

TEST_CASE("adam: first step closed form and a hand-rolled second step") {
    const double g = 0.37, lr = 0.01;
    std::vector<nn::Var> p{nn::parameter({1}, {0.5})};
    AdamState s;
    s.lr = lr;
    p[0]->grad = {g};
    adam_step(p, s);
    // m_hat = g, v_hat = g^2
    CHECK(p[0]->value[0] == doctest::Approx(0.5 - lr * g / (std::abs(g) + 1e-8)).epsilon(1e-15));

    p[0]->grad = {g};
    adam_step(p, s);
    double m = 0, v = 0, x = 0.5;
    for (int t = 1; t <= 2; ++t) {
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(p[0]->value[0] == doctest::Approx(x).epsilon(1e-15));
}

TEST_CASE("train config validation and presets") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.lr == 1e-4);
    CHECK(c.atlas_lr == 1e-5);
    CHECK(TrainConfig::full_scale().iterations == 100000);
    c.iterations = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.canny.low = 0.5;
    CHECK_THROWS(c.validate());
}

TEST_CASE("first iteration logs the loss of the unwarped adjusted pair") {
    const auto data = tiny_dataset(1, 3);
    TrainConfig cfg = tiny_config(1);
    auto model = nn::RegistrationModel::initialize(cfg.aan_arch, cfg.dlr_arch, true, cfg.seed);
    const Volume phi = appearance_map(model, data[1].image, data[0].image, data[1].edges);
    AdamState adam;
    adam.lr = cfg.lr;
    const LogRow row = train_step(model, adam, data[1], data[0].image, cfg.loss, 1);
    Volume adjusted = data[1].image;
    for (std::size_t i = 0; i < adjusted.size(); ++i) adjusted[i] += phi[i];
    CHECK(row.sim == doctest::Approx(losses::mse_loss(data[0].image, adjusted)).epsilon(1e-14));
    CHECK(row.smooth == 0.0);
}

TEST_CASE("identical pairs stay at zero similarity loss") {
    const auto data = tiny_dataset(1, 4);
    std::vector<TrainingSample> same{data[0], data[0]};
    TrainConfig cfg = tiny_config(10);
    cfg.aan_enabled = false;
    const auto r = train_pairwise(same, cfg);
    for (const auto& row : r.log) CHECK(row.sim < 1e-6);
}

TEST_CASE("the AAN receives gradient through the similarity term") {
    const auto data = tiny_dataset(1, 5);
    TrainConfig cfg = tiny_config(1);
    cfg.loss.lambda_structure = 0;
    auto model = nn::RegistrationModel::initialize(cfg.aan_arch, cfg.dlr_arch, true, 2);
    AdamState adam;
    for (auto& p : trainable(model)) p->zero_grad();
    train_step(model, adam, data[1], data[0].image, cfg.loss, 1);
    double norm = 0;
    for (auto& p : model.aan.params)
        for (double g : p.var->grad) norm += g * g;
    CHECK(norm > 0);
}

TEST_CASE("training reduces the moving-average similarity and is reproducible") {
    const auto data = tiny_dataset(3, 6);
    TrainConfig cfg = tiny_config(200);
    const auto a = train_pairwise(data, cfg);
    REQUIRE(a.log.size() == 200);
    CHECK(moving_average_sim(a.log, 199) < moving_average_sim(a.log, 19));
    const auto b = train_pairwise(data, cfg);
    std::ostringstream la, lb;
    write_log_csv(la, a.log);
    write_log_csv(lb, b.log);
    CHECK(la.str() == lb.str());
    CHECK(la.str().rfind("iteration,L_sim,L_structure,R_smooth,R_antifold,total\n", 0) == 0);
}

TEST_CASE("ablation keeps the appearance map at zero") {
    const auto data = tiny_dataset(1, 7);
    TrainConfig cfg = tiny_config(3);
    cfg.aan_enabled = false;
    const auto r = train_pairwise(data, cfg);
    CHECK(appearance_map(r.model, data[0].image, data[1].image, data[0].edges) == Volume(data[0].image.dims(), 0.0));
    for (const auto& row : r.log) CHECK(row.structure == 0.0);
}

TEST_CASE("training input errors") {
    const auto data = tiny_dataset(1, 8);
    TrainConfig cfg = tiny_config(1);
    CHECK_THROWS(train_pairwise({data[0]}, cfg));
    cfg.dlr_arch.levels = 6;  // 16 is not divisible by 32
    CHECK_THROWS(train_pairwise(data, cfg));
}

TEST_CASE("atlas fine-tuning") {
    const auto data = tiny_dataset(2, 9);
    TrainConfig cfg = tiny_config(30);
    const auto pre = train_pairwise(data, cfg);
    cfg.atlas_iterations = 0;
    const auto same = finetune_atlas(pre.model, data[0].image, data, cfg);
    for (std::size_t i = 0; i < same.model.dlr.params.size(); ++i)
        CHECK(same.model.dlr.params[i].var->value == pre.model.dlr.params[i].var->value);

    cfg.atlas_iterations = 20;
    const auto tuned = finetune_atlas(pre.model, data[0].image, data, cfg);
    CHECK(tuned.log.size() == 20);
    // the pretrained model is left untouched
    for (std::size_t i = 0; i < pre.model.dlr.params.size(); ++i)
        CHECK(same.model.dlr.params[i].var->value == pre.model.dlr.params[i].var->value);
}

TEST_CASE("moving average window") {
    std::vector<LogRow> log;
    for (int i = 1; i <= 30; ++i) log.push_back({i, static_cast<double>(i), 0, 0, 0, 0});
    CHECK(moving_average_sim(log, 29) == doctest::Approx(20.5));
    CHECK(moving_average_sim(log, 1) == doctest::Approx(1.5));
    CHECK_THROWS(moving_average_sim({}, 0));
}
