#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "nlsid/error.hpp"
#include "nlsid/signals.hpp"
#include "nlsid/simulators.hpp"
#include "nlsid/validate.hpp"

using namespace nlsid;

namespace {

double binomial_cdf(int n, double p, int k) {
    double s = 0.0;
    for (int i = 0; i <= k; ++i) {
        const double logc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
        s += std::exp(logc + i * std::log(p) + (n - i) * std::log1p(-p));
    }
    return s;
}

Eigen::MatrixXd gaussian_cloud(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd X(rows, cols);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = nd(gen);
    return X;
}

}  // namespace

TEST(FitMetric, PerfectMeanAndHandComputedCases) {
    const std::vector<double> y{1.0, 2.0, 3.0, 4.0};
    EXPECT_DOUBLE_EQ(fit_metric(y, y), 100.0);
    EXPECT_NEAR(fit_metric(y, std::vector<double>(4, 2.5)), 0.0, 1e-12);
    // ||e|| = 1, ||y - mean|| = sqrt(5).
    EXPECT_NEAR(fit_metric(y, std::vector<double>{1.0, 2.0, 3.0, 5.0}), 100.0 * (1.0 - 1.0 / std::sqrt(5.0)), 1e-12);
    EXPECT_THROW((void)fit_metric(std::vector<double>(4, 1.0), y), ConfigError);
    EXPECT_THROW((void)fit_metric(y, std::vector<double>{1.0}), ConfigError);
}

TEST(BinomialQuantile, MatchesTheCumulativeSum) {
    for (int n : {1, 10, 25, 100}) {
        for (double p : {0.05, 0.3}) {
            const int k = binomial_quantile(n, p, 0.95);
            EXPECT_GE(binomial_cdf(n, p, k), 0.95 - 1e-12);
            if (k > 0) EXPECT_LT(binomial_cdf(n, p, k - 1), 0.95);
        }
    }
    EXPECT_EQ(binomial_quantile(25, 0.05, 0.95), 3);
}

TEST(ResidualTests, WhiteNoisePassesMostOfTheTime) {
    int pass = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto e = white_noise(4096, 1.0, 1000 + s);
        const auto u = white_noise(4096, 1.0, 5000 + s);
        const auto t = residual_tests(e, u);
        if (t.autocorr.pass) ++pass;
        EXPECT_EQ(t.autocorr.values.size(), 25u);
        EXPECT_NEAR(t.autocorr.bound, 1.96 / std::sqrt(4096.0), 1e-12);
    }
    EXPECT_GE(pass, 90);
}

TEST(ResidualTests, ColoredResidualFails) {
    auto e = white_noise(4096, 1.0, 3);
    for (std::size_t t = 1; t < e.size(); ++t) e[t] += 0.9 * e[t - 1];
    const auto t = residual_tests(e, white_noise(4096, 1.0, 4));
    EXPECT_FALSE(t.autocorr.pass);
    EXPECT_GT(t.autocorr.exceedances, t.autocorr.allowed);
    EXPECT_TRUE(t.crosscorr.pass);
}

TEST(ResidualTests, ResidualDrivenByLaggedInputFailsCrossCorrelation) {
    const auto u = white_noise(4096, 1.0, 5);
    // Unmodelled dynamics spread over lags 1..8: more exceedances than chance allows.
    auto e = white_noise(4096, 0.1, 6);
    for (std::size_t t = 8; t < e.size(); ++t)
        for (std::size_t l = 1; l <= 8; ++l) e[t] += 0.3 * u[t - l];
    const auto t = residual_tests(e, u);
    EXPECT_FALSE(t.crosscorr.pass);
    EXPECT_GE(t.crosscorr.exceedances, 8);
}

TEST(ResidualTests, EdgeCases) {
    const std::vector<double> zero(1000, 0.0);
    const auto u = white_noise(1000, 1.0, 7);
    const auto t = residual_tests(zero, u);
    EXPECT_TRUE(t.autocorr.pass);
    EXPECT_FALSE(t.notes.empty());
    EXPECT_THROW((void)residual_tests(white_noise(200, 1.0, 1), white_noise(200, 1.0, 2)), ConfigError);
    EXPECT_THROW((void)residual_tests(zero, white_noise(999, 1.0, 1)), ConfigError);
}

TEST(DomainCoverage, SameCloudIsFullyInside) {
    const auto X = gaussian_cloud(500, 3, 1);
    const auto rep = domain_coverage(X, X, 1.0);
    EXPECT_DOUBLE_EQ(rep.fraction_inside, 1.0);
    EXPECT_FALSE(rep.extrapolation_flag);
}

TEST(DomainCoverage, ScaledCloudIsFlagged) {
    const auto train = gaussian_cloud(1000, 2, 2);
    const auto inside = domain_coverage(train, gaussian_cloud(1000, 2, 3));
    EXPECT_FALSE(inside.extrapolation_flag);
    EXPECT_GT(inside.fraction_inside, 0.95);
    const auto outside = domain_coverage(train, 3.0 * gaussian_cloud(1000, 2, 3));
    EXPECT_TRUE(outside.extrapolation_flag);
    EXPECT_LT(outside.fraction_inside, 0.9);
}

TEST(DomainCoverage, InvariantUnderAffineMaps) {
    const auto train = gaussian_cloud(400, 3, 4);
    const Eigen::MatrixXd test = 1.5 * gaussian_cloud(200, 3, 5);
    Eigen::Matrix3d A;
    A << 2.0, 0.3, 0.0, -1.0, 1.0, 0.5, 0.2, 0.0, 3.0;
    const Eigen::RowVector3d b(1.0, -2.0, 5.0);
    const auto a = domain_coverage(train, test);
    const auto c = domain_coverage((train * A.transpose()).rowwise() + b, (test * A.transpose()).rowwise() + b);
    EXPECT_NEAR(a.radius, c.radius, 1e-8 * a.radius);
    for (std::size_t i = 0; i < a.test_distances.size(); ++i)
        EXPECT_NEAR(a.test_distances[i], c.test_distances[i], 1e-8 * (1.0 + a.test_distances[i]));
}

TEST(DomainCoverage, DuffingStatesAtHigherLevelAreFlagged) {
    auto states = [](double level, std::uint64_t seed) {
        MultisineDesign d;
        d.period_samples = 1024;
        d.last_line = 256;
        d.rms = level;
        d.seed = seed;
        const auto rec = simulate_duffing(DuffingParams::with_resonance(1.0, 0.1, 0.05, 0.002),
                                          design_multisine(make_multisine(d)), 1.0, NoiseSpec{}, 1024);
        Eigen::MatrixXd S(static_cast<Eigen::Index>(rec.size()) - 1, 2);
        for (Eigen::Index t = 0; t < S.rows(); ++t) {
            S(t, 0) = rec.output[static_cast<std::size_t>(t) + 1];
            S(t, 1) = rec.output[static_cast<std::size_t>(t)];
        }
        return S;
    };
    EXPECT_TRUE(domain_coverage(states(0.5, 1), states(2.0, 2)).extrapolation_flag);
    EXPECT_FALSE(domain_coverage(states(1.0, 1), states(1.0, 2)).extrapolation_flag);
}

TEST(DomainCoverage, RejectsBadShapes) {
    EXPECT_THROW((void)domain_coverage(gaussian_cloud(3, 3, 1), gaussian_cloud(5, 3, 2)), ConfigError);
    EXPECT_THROW((void)domain_coverage(gaussian_cloud(50, 3, 1), gaussian_cloud(5, 2, 2)), ConfigError);
}

namespace {

// Least-squares gain of y on u with its textbook standard error.
FitOutcome gain_fit(const SignalRecord& rec) {
    double uy = 0.0, uu = 0.0;
    for (std::size_t t = 0; t < rec.size(); ++t) {
        uy += rec.input[t] * rec.output[t];
        uu += rec.input[t] * rec.input[t];
    }
    const double a = uy / uu;
    double ss = 0.0;
    for (std::size_t t = 0; t < rec.size(); ++t) ss += std::pow(rec.output[t] - a * rec.input[t], 2);
    const double sigma = std::sqrt(ss / static_cast<double>(rec.size() - 1));
    return {{a}, {sigma / std::sqrt(uu)}};
}

}  // namespace

TEST(RealizationVariability, NoiseOnlyLinearFitIsConsistent) {
    const ExcitationFactory factory = [](std::uint64_t seed) {
        NoiseSpec n;
        n.measurement_std = 0.5;
        n.seed = seed + 10000;
        return simulate_static(std::vector<double>{0.0, 2.0}, white_noise(1024, 1.0, seed), n, 0);
    };
    const auto rep = realization_variability(gain_fit, factory, 100, 1);
    ASSERT_EQ(rep.ratio.size(), 1u);
    EXPECT_GT(rep.ratio[0], 0.6);
    EXPECT_LT(rep.ratio[0], 1.6);
    EXPECT_FALSE(rep.structural_error_flag);
    EXPECT_EQ(rep.realizations.size(), 100u);
}

TEST(RealizationVariability, CubicShowsStructuralError) {
    const ExcitationFactory factory = [](std::uint64_t seed) {
        return simulate_static(std::vector<double>{0.0, 0.0, 0.0, 1.0}, white_noise(4096, 1.0, seed), NoiseSpec{}, 0);
    };
    const auto rep = realization_variability(gain_fit, factory, 100, 1);
    EXPECT_TRUE(rep.structural_error_flag);
    EXPECT_NEAR(rep.ratio[0], std::sqrt(7.0), 0.3 * std::sqrt(7.0));
}

TEST(RealizationVariability, FewRealizationsWarnOrThrow) {
    const ExcitationFactory factory = [](std::uint64_t seed) {
        NoiseSpec n;
        n.measurement_std = 0.1;
        n.seed = seed + 1;
        return simulate_static(std::vector<double>{0.0, 1.0}, white_noise(256, 1.0, seed), n, 0);
    };
    EXPECT_FALSE(realization_variability(gain_fit, factory, 5).warnings.empty());
    EXPECT_THROW((void)realization_variability(gain_fit, factory, 4), ConfigError);
}
