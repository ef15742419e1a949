#include <cmath>
#include <numbers>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "nlsid/error.hpp"
#include "nlsid/signals.hpp"
#include "nlsid/simulators.hpp"

using namespace nlsid;

namespace {

std::vector<double> sine(std::size_t n, double f, double amp = 1.0) {
    std::vector<double> u(n);
    for (std::size_t t = 0; t < n; ++t) u[t] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t));
    return u;
}

double rms_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

TEST(Duffing, ZeroInputStaysAtRest) {
    const auto rec = simulate_duffing(DuffingParams::with_resonance(1.0, 0.1, 0.05, 1.0), std::vector<double>(64, 0.0),
                                      1.0, NoiseSpec{});
    for (double y : rec.output) EXPECT_EQ(y, 0.0);
}

TEST(Duffing, LinearLimitMatchesExactZeroOrderHoldDiscretization) {
    const DuffingParams p = DuffingParams::with_resonance(1.0, 0.1, 0.05, 0.0);
    const auto u = white_noise(512, 1.0, 3);
    const auto rec = simulate_duffing(p, u, 1.0, NoiseSpec{});

    // Augmented exponential gives Ad and Bd in one shot.
    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    M(0, 1) = 1.0;
    M(1, 0) = -p.stiffness;
    M(1, 1) = -p.damping;
    M(1, 2) = p.input_gain;
    const Eigen::Matrix3d E = M.exp();
    const Eigen::Matrix2d Ad = E.topLeftCorner<2, 2>();
    const Eigen::Vector2d Bd = E.topRightCorner<2, 1>();
    Eigen::Vector2d x = Eigen::Vector2d::Zero();
    std::vector<double> ref(u.size());
    for (std::size_t t = 0; t < u.size(); ++t) {
        ref[t] = x(0);
        x = Ad * x + Bd * u[t];
    }
    EXPECT_LT(rms_diff(rec.output, ref) / rms(ref), 1e-6);
}

TEST(Duffing, HalvingTheStepBarelyChangesTheOutput) {
    DuffingParams p = DuffingParams::with_resonance(1.0, 0.1, 0.05, 0.05);
    const auto u = sine(400, 0.05);
    const auto a = simulate_duffing(p, u, 1.0, NoiseSpec{});
    p.oversample *= 2;
    const auto b = simulate_duffing(p, u, 1.0, NoiseSpec{});
    EXPECT_LT(rms_diff(a.output, b.output), 1e-7);
}

TEST(Duffing, NoiseIsSeededAndRejectsBadParameters) {
    const DuffingParams p = DuffingParams::with_resonance(1.0);
    const auto u = white_noise(64, 1.0, 1);
    NoiseSpec n;
    n.measurement_std = 0.1;
    n.seed = 4;
    EXPECT_EQ(simulate_duffing(p, u, 1.0, n).output, simulate_duffing(p, u, 1.0, n).output);
    DuffingParams bad = p;
    bad.damping = 0.0;
    EXPECT_THROW((void)simulate_duffing(bad, u, 1.0, n), ConfigError);
    EXPECT_THROW((void)simulate_duffing(p, u, 1.0, n, 10), ConfigError);  // 64 is not a multiple of 10
}

TEST(Duffing, StrongForcingOfAnUnstableSpringDiverges) {
    DuffingParams p = DuffingParams::with_resonance(1.0, 0.1, 0.05, -5.0);  // softening, escapes the well
    EXPECT_THROW((void)simulate_duffing(p, std::vector<double>(500, 3.0), 1.0, NoiseSpec{}), DivergenceError);
}

TanksParams tanks() {
    TanksParams p;
    p.k1 = 0.5;
    p.k2 = 0.4;
    p.k3 = 0.3;
    p.k4 = 0.2;
    p.x1_max = 10.0;
    p.x2_max = 10.0;
    return p;
}

TEST(Tanks, ZeroInputStaysEmpty) {
    const auto rec = simulate_tanks(tanks(), std::vector<double>(100, 0.0), 1.0, NoiseSpec{});
    for (double y : rec.output) EXPECT_EQ(y, 0.0);
}

TEST(Tanks, ConstantInputSettlesAtTheFixedPoint) {
    const TanksParams p = tanks();
    const double u = 1.5;
    const auto rec = simulate_tanks(p, std::vector<double>(3000, u), 1.0, NoiseSpec{});
    const double x2 = rec.output.back();
    // k1 sqrt(x1) = k4 u and k2 sqrt(x1) = k3 sqrt(x2).
    const double sx1 = p.k4 * u / p.k1;
    EXPECT_NEAR(std::sqrt(x2), p.k2 * sx1 / p.k3, 1e-6);
}

TEST(Tanks, LargeInputSaturates) {
    TanksParams p = tanks();
    p.x1_max = 1.0;
    p.x2_max = 2.0;
    const auto rec = simulate_tanks(p, std::vector<double>(3000, 50.0), 1.0, NoiseSpec{});
    // Full upper tank: the lower one settles where k2 sqrt(x1_max) = k3 sqrt(x2).
    const double settled = std::pow(p.k2 * std::sqrt(p.x1_max) / p.k3, 2);
    ASSERT_LT(settled, p.x2_max);
    EXPECT_NEAR(rec.output.back(), settled, 1e-9);

    p.x2_max = 0.5 * settled;
    const auto capped = simulate_tanks(p, std::vector<double>(3000, 50.0), 1.0, NoiseSpec{});
    for (std::size_t t = 2500; t < 3000; ++t) EXPECT_DOUBLE_EQ(capped.output[t], p.x2_max);
}

TEST(Static, IdentityPolynomialPassesTheInput) {
    const auto u = white_noise(50, 1.0, 2);
    const auto rec = simulate_static(std::vector<double>{0.0, 1.0}, u, NoiseSpec{});
    EXPECT_EQ(rec.output, u);
}

TEST(Static, ProcessNoiseEntersBeforeTheNonlinearity) {
    const auto u = white_noise(50, 1.0, 2);
    NoiseSpec n;
    n.process_std = 0.5;
    n.process_entry = ProcessEntry::before_nonlinearity;
    n.seed = 11;
    const auto rec = simulate_static(std::vector<double>{0.0, 0.0, 0.0, 1.0}, u, n);
    const auto w = white_noise(50, 0.5, 11);
    for (std::size_t t = 0; t < u.size(); ++t) EXPECT_NEAR(rec.output[t], std::pow(u[t] + w[t], 3), 1e-12);
}

TEST(Static, SquareOfAnOddMultisineOnlyHasEvenLines) {
    MultisineDesign d;
    d.period_samples = 256;
    d.last_line = 41;
    d.grid_kind = GridKind::odd_only;
    const auto u = design_multisine(make_multisine(d));
    const auto rec = simulate_static(std::vector<double>{0.0, 0.0, 1.0}, u, NoiseSpec{}, 256);
    const auto Y = dft(rec.output);
    double even = 0.0;
    for (std::size_t k = 0; k < 256; ++k) {
        if (k % 2 == 1) EXPECT_LT(std::abs(Y.bins[k]), 1e-9) << k;
        else even += std::norm(Y.bins[k]);
    }
    EXPECT_GT(even, 1.0);
}

TEST(Filter, DirectFormMatchesDifferenceEquation) {
    RationalFilter f;
    f.num = {0.5, 0.2, -0.1};
    f.den = {1.0, -0.6, 0.2};
    const auto x = white_noise(100, 1.0, 6);
    const auto y = f.apply(x);
    for (std::size_t t = 0; t < x.size(); ++t) {
        double ref = 0.0;
        for (std::size_t i = 0; i < 3 && i <= t; ++i) ref += f.num[i] * x[t - i];
        for (std::size_t i = 1; i < 3 && i <= t; ++i) ref -= f.den[i] * y[t - i];
        EXPECT_NEAR(y[t], ref, 1e-12);
    }
    RationalFilter unstable;
    unstable.num = {1.0};
    unstable.den = {1.0, -1.2};
    EXPECT_THROW(unstable.validate(), ConfigError);
}

TEST(BlockOriented, IdentityNonlinearityIsPlainFiltering) {
    BlockOrientedSpec s;
    s.first.num = {0.3, 0.1};
    s.first.den = {1.0, -0.5};
    s.nonlinearity = {0.0, 1.0};
    const auto u = white_noise(80, 1.0, 7);
    const auto ref = s.first.apply(u);
    const auto rec = simulate_block_oriented(s, u, NoiseSpec{});
    for (std::size_t t = 0; t < u.size(); ++t) EXPECT_NEAR(rec.output[t], ref[t], 1e-12);
}

TEST(BlockOriented, HammersteinWithUnitDelay) {
    BlockOrientedSpec s;
    s.structure = BlockStructure::hammerstein;
    s.first.num = {0.0, 1.0};
    s.nonlinearity = {0.0, 0.0, 1.0};
    const auto u = white_noise(40, 1.0, 8);
    const auto rec = simulate_block_oriented(s, u, NoiseSpec{});
    EXPECT_EQ(rec.output[0], 0.0);
    for (std::size_t t = 1; t < u.size(); ++t) EXPECT_NEAR(rec.output[t], u[t - 1] * u[t - 1], 1e-14);
}

TEST(BlockOriented, WienerHammersteinMatchesHandComposition) {
    BlockOrientedSpec s;
    s.structure = BlockStructure::wiener_hammerstein;
    s.first.num = {1.0, 0.5};
    s.second.num = {0.2};
    s.second.den = {1.0, -0.7};
    s.nonlinearity = {0.1, 1.0, 0.0, -0.3};
    const auto u = white_noise(32, 1.0, 9);
    const auto rec = simulate_block_oriented(s, u, NoiseSpec{});
    double ylast = 0.0;
    for (std::size_t t = 0; t < u.size(); ++t) {
        const double x = u[t] + (t > 0 ? 0.5 * u[t - 1] : 0.0);
        const double v = 0.1 + x - 0.3 * x * x * x;
        const double y = 0.2 * v + 0.7 * ylast;
        EXPECT_NEAR(rec.output[t], y, 1e-12);
        ylast = y;
    }
}
