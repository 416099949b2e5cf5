#include <doctest.h>

#include "aanreg/eval.hpp"
#include "support.hpp"

#include <sstream>

using namespace aanreg;

namespace {

LabelMap cube(const Dims& d, std::size_t x0, std::size_t x1, std::uint16_t label) {
    LabelMap m(d, 0);
    for (std::size_t x = x0; x < x1; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) m(x, y, z) = label;
    return m;
}

}  // namespace

TEST_CASE("dice of identical maps and the half-overlap cube") {
    const Dims d{8, 4, 4};
    const LabelMap a = cube(d, 0, 4, 1);
    CHECK(dice(a, a).mean == 1.0);
    // |A| = |B| = 64, overlap 32
    const LabelMap b = cube(d, 2, 6, 1);
    CHECK(dice(a, b).mean == 0.5);
    CHECK(dice(a, cube(d, 4, 8, 1)).mean == 0.0);
    // a label present on one side only scores zero
    CHECK(dice(a, cube(d, 0, 4, 2)).per_label.size() == 2);
    CHECK(dice(LabelMap(d, 0), LabelMap(d, 0)).per_label.empty());
}

TEST_CASE("dice matches the counting oracle and is symmetric") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const Dims d = testing_support::random_dims(rng, 2, 6);
        LabelMap a(d), b(d);
        for (std::size_t i = 0; i < d.count(); ++i) {
            a[i] = static_cast<std::uint16_t>(rng() % 4);
            b[i] = static_cast<std::uint16_t>(rng() % 4);
        }
        const auto r = dice(a, b);
        const auto o = testing_support::dice_oracle(a, b);
        REQUIRE(r.per_label.size() == o.size());
        double mean = 0;
        for (const auto& [l, v] : o) {
            CHECK(std::abs(r.per_label.at(l) - v) < 1e-12);
            mean += v;
        }
        CHECK(std::abs(r.mean - mean / static_cast<double>(o.size())) < 1e-12);
        CHECK(dice(b, a).mean == doctest::Approx(r.mean).epsilon(1e-15));
        CHECK(r.mean >= 0.0);
        CHECK(r.mean <= 1.0);
    }
}

TEST_CASE("evaluate_pairs with the identity registrar") {
    synth::PairSpec spec;
    spec.phantom.dims = {16, 16, 16};
    spec.control_spacing = 8;
    spec.deform_amplitude = 2;
    const auto pairs = to_eval_pairs(synth::generate_pairs(2, 5, spec), CannyParams{});
    CHECK(pairs[1].id == "pair_001");
    const Report r = evaluate_pairs(pairs, [](const EvalPair& p) { return DisplacementField(p.fixed.dims()); });
    REQUIRE(r.rows.size() == 2);
    for (const auto& row : r.rows) {
        CHECK(row.dice_after == row.dice_before);
        CHECK(row.neg_jacobians == 0);
    }
    CHECK(r.mean_dice_before == doctest::Approx((r.rows[0].dice_before + r.rows[1].dice_before) / 2));

    std::ostringstream out;
    write_report_csv(out, r);
    const std::string s = out.str();
    CHECK(s.rfind("pair_id,dice_before,dice_after,neg_jacobians,dice_label_1", 0) == 0);
    CHECK(s.find("\nmean,") != std::string::npos);
}

TEST_CASE("a folding registrar is counted") {
    synth::PairSpec spec;
    spec.phantom.dims = {16, 16, 16};
    spec.control_spacing = 8;
    const auto pairs = to_eval_pairs(synth::generate_pairs(1, 6, spec), CannyParams{});
    const Report r = evaluate_pairs(pairs, [](const EvalPair& p) {
        DisplacementField u(p.fixed.dims());
        for (std::size_t i = 0; i < u.dims().count(); ++i)
            u.component(0)[i] = -2.0 * static_cast<double>(u.dims().coords(i)[0]);
        return u;
    });
    CHECK(r.rows[0].neg_jacobians == 16 * 16 * 16);
}

TEST_CASE("experiment helpers") {
    CHECK(parse_experiment_kind("lambda_sweep") == ExperimentKind::LambdaSweep);
    CHECK(to_string(ExperimentKind::LtSweep) == "lt_sweep");
    CHECK_THROWS(parse_experiment_kind("nope"));
    const CannyParams c = sweep_canny(0.3, 0.2, 1.0);
    CHECK(c.low == 0.2);
    CHECK(c.high == 0.2);
    CHECK(sweep_canny(0.05, 0.2, 1.0).low == 0.05);

    std::ostringstream out;
    write_experiment_csv(out, {ExperimentRow{"lambda", 0.1, 1, "aan", 8, 0.7, 0.8, 0.0, 0.01}});
    CHECK(out.str().rfind("axis,value,seed,variant,train_samples,dice_before,dice_after,neg_jacobians,final_sim\n", 0) ==
          0);
}

TEST_CASE("small lambda sweep end to end") {
    ExperimentConfig cfg;
    cfg.data.phantom.dims = {16, 16, 16};
    cfg.data.control_spacing = 4;
    cfg.data.deform_amplitude = 1;
    cfg.train_pairs = 2;
    cfg.test_pairs = 2;
    cfg.lambdas = {0.1};
    cfg.train.iterations = 3;
    cfg.train.aan_arch = {2, 2, 3, 1, 0.2};
    cfg.train.dlr_arch = {2, 2, 2, 3, 0.2};
    const auto dir = std::filesystem::temp_directory_path() / "aanreg_test_experiment";
    const auto rows = run_experiment_grid(ExperimentKind::LambdaSweep, cfg, dir);
    CHECK(rows.size() == 2);  // one lambda plus the ablation
    CHECK(std::filesystem::exists(dir / "lambda_sweep.csv"));
    CHECK(std::filesystem::exists(dir / "lambda_sweep.pgm"));
    const auto again = run_experiment_grid(ExperimentKind::LambdaSweep, cfg, dir);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].dice_after == rows[i].dice_after);
}
