#include <cmath>

#include <gtest/gtest.h>

#include "nlsid/error.hpp"
#include "nlsid/narx.hpp"
#include "nlsid/signals.hpp"
#include "nlsid/simulators.hpp"

using namespace nlsid;

namespace {

SignalRecord first_order(std::size_t n, double noise_std, std::uint64_t seed) {
    SignalRecord rec;
    rec.period_samples = n;
    rec.num_periods = 1;
    rec.input = white_noise(n, 1.0, seed);
    // Equation-error noise, so the one-step predictor is the optimal one.
    const auto v = white_noise(n, noise_std, seed + 1000);
    rec.output.assign(n, 0.0);
    rec.output[0] = v[0];
    for (std::size_t t = 1; t < n; ++t) rec.output[t] = 0.5 * rec.output[t - 1] + rec.input[t - 1] + v[t];
    return rec;
}

NarxOptions linear_options() {
    NarxOptions o;
    o.na = 1;
    o.nb = 1;
    o.degree = 1;
    o.direct_term = false;
    o.include_constant = false;
    return o;
}

double rms_error(std::span<const double> y, std::span<const double> yhat, std::size_t from) {
    double s = 0.0;
    for (std::size_t t = from; t < y.size(); ++t) s += (y[t] - yhat[t]) * (y[t] - yhat[t]);
    return std::sqrt(s / static_cast<double>(y.size() - from));
}

}  // namespace

TEST(Narx, RecoversAFirstOrderLinearSystem) {
    const auto m = fit_narx(first_order(300, 0.0, 1), linear_options());
    ASSERT_EQ(m.map.coefficients.cols(), 2);
    EXPECT_NEAR(m.map.coefficients(0, 0), 0.5, 1e-8);
    EXPECT_NEAR(m.map.coefficients(0, 1), 1.0, 1e-8);
    EXPECT_EQ(m.regressor_layout, (std::vector<std::string>{"y(t-1)", "u(t-1)"}));
    EXPECT_LT(m.training_rms, 1e-10);
}

TEST(Narx, ZeroOutputGivesZeroCoefficients) {
    SignalRecord rec = first_order(200, 0.0, 2);
    std::fill(rec.output.begin(), rec.output.end(), 0.0);
    NarxOptions o;
    const auto m = fit_narx(rec, o);
    EXPECT_TRUE(m.map.coefficients.isZero(0.0));
    EXPECT_FALSE(m.warnings.empty());  // y regressors vanish: rank deficient
}

TEST(Narx, ExactModelPredictsWithoutError) {
    const auto rec = first_order(300, 0.0, 3);
    const auto m = fit_narx(rec, linear_options());
    const auto p = predict_one_step(m, rec);
    EXPECT_EQ(p.first_valid, 1u);
    EXPECT_TRUE(std::isnan(p.values[0]));
    for (std::size_t t = 1; t < rec.size(); ++t) EXPECT_NEAR(p.values[t], rec.output[t], 1e-10);
    EXPECT_LT(narx_equation_cost(m, rec), 1e-20);
}

TEST(Narx, ConstantSignalIsFitExactly) {
    SignalRecord rec;
    rec.period_samples = 50;
    rec.num_periods = 1;
    rec.input.assign(50, 0.0);
    rec.output.assign(50, 3.0);
    NarxOptions o;
    o.degree = 2;
    const auto m = fit_narx(rec, o);
    const auto p = predict_one_step(m, rec);
    for (std::size_t t = p.first_valid; t < 50; ++t) EXPECT_NEAR(p.values[t], 3.0, 1e-10);
}

TEST(Narx, FreeRunOfAnExactLinearModelMatchesTheFilter) {
    const auto rec = first_order(300, 0.0, 4);
    const auto m = fit_narx(rec, linear_options());
    const auto sim = simulate_free_run(m, rec.input, std::vector<double>{0.0});
    ASSERT_EQ(sim.status, SimStatus::ok);
    RationalFilter f;
    f.num = {0.0, 1.0};
    f.den = {1.0, -0.5};
    const auto ref = f.apply(rec.input);
    for (std::size_t t = 0; t < rec.size(); ++t) EXPECT_NEAR(sim.output[t], ref[t], 1e-9);
}

TEST(Narx, OneStepPredictionBeatsSimulationOnNoisyData) {
    const auto train = first_order(2000, 0.3, 5);
    const auto val = first_order(2000, 0.3, 6);
    const auto m = fit_narx(train, linear_options());
    const auto p = predict_one_step(m, val);
    const auto sim = simulate_free_run(m, val.input, std::vector<double>{val.output[0]});
    EXPECT_LE(rms_error(val.output, p.values, 1), rms_error(val.output, sim.output, 1));
}

TEST(Narx, UnstableModelReportsTheDivergenceIndex) {
    NarxModel m;
    m.na = 1;
    m.nb = 0;
    m.direct_term = true;
    m.map = PolyMap(MonomialBasis(2, 1, 1), (Eigen::MatrixXd(1, 2) << 2.0, 0.0).finished());
    const auto sim = simulate_free_run(m, std::vector<double>(100, 0.0), std::vector<double>{1.0});
    ASSERT_EQ(sim.status, SimStatus::diverged);
    // 2^t exceeds 1e6 first at t = 20.
    EXPECT_EQ(sim.divergence_index, 20u);
    EXPECT_EQ(sim.output.size(), 20u);
    EXPECT_THROW((void)simulate_free_run(m, std::vector<double>(10, 0.0), std::vector<double>{}), ConfigError);
}

namespace {

SignalRecord duffing(double level, std::uint64_t seed) {
    MultisineDesign d;
    d.period_samples = 1024;
    d.last_line = 256;
    d.rms = level;
    d.seed = seed;
    const auto u = repeat_periods(design_multisine(make_multisine(d)), 2);
    NoiseSpec n;
    n.measurement_std = 1e-4;
    n.seed = seed + 1;
    return simulate_duffing(DuffingParams::with_resonance(1.0, 0.1, 0.05, 0.002), u, 1.0, n, 1024).drop_periods(1);
}

}  // namespace

TEST(Narx, DuffingPredictionAndExtrapolation) {
    NarxOptions o;
    o.na = 2;
    o.nb = 2;
    o.degree = 3;
    const auto m = fit_narx(duffing(1.0, 10), o);
    const auto val = duffing(1.0, 20);
    const auto p = predict_one_step(m, val);
    EXPECT_LE(rms_error(val.output, p.values, 2), 0.01 * rms(val.output));

    auto free_run_error = [&](const SignalRecord& r) {
        const auto sim = simulate_free_run(m, r.input, std::vector<double>{r.output[0], r.output[1]});
        EXPECT_EQ(sim.status, SimStatus::ok);
        return rms_error(r.output, sim.output, 2) / rms(r.output);
    };
    const double same = free_run_error(val);
    EXPECT_LE(same, 0.10);
    const double wide = free_run_error(duffing(2.0, 30));
    EXPECT_GT(wide, same);
}
