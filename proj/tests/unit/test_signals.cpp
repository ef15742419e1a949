#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "nlsid/error.hpp"
#include "nlsid/signals.hpp"
#include "nlsid/simulators.hpp"

using namespace nlsid;

namespace {

std::vector<Complex> naive_dft(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < n; ++l)
            out[k] += x[l] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * l) / static_cast<double>(n));
    return out;
}

MultisineSpec single_cosine(std::size_t N) {
    MultisineSpec s;
    s.period_samples = N;
    s.excited_lines = {1};
    s.amplitudes = {1.0};
    s.phases = {0.0};
    return s;
}

}  // namespace

TEST(Multisine, SingleLineIsACosineAndTilesPeriodically) {
    const auto period = design_multisine(single_cosine(16));
    ASSERT_EQ(period.size(), 16u);
    for (std::size_t l = 0; l < 16; ++l)
        EXPECT_NEAR(period[l], std::cos(2.0 * std::numbers::pi * static_cast<double>(l) / 16.0), 1e-15);
    const auto two = repeat_periods(period, 2);
    for (std::size_t l = 0; l < 16; ++l) EXPECT_EQ(two[l + 16], two[l]);
}

TEST(Multisine, RmsMatchesAmplitudeSum) {
    MultisineDesign d;
    d.period_samples = 512;
    d.last_line = 100;
    d.rms = 0.7;
    d.seed = 3;
    const auto spec = make_multisine(d);
    double s = 0.0;
    for (double a : spec.amplitudes) s += a * a / 2.0;
    const auto u = design_multisine(spec);
    EXPECT_NEAR(rms(u), std::sqrt(s), 1e-12);
    EXPECT_NEAR(rms(u), 0.7, 1e-12);
}

TEST(Multisine, SameSeedGivesSamePhases) {
    MultisineDesign d;
    d.period_samples = 256;
    d.last_line = 50;
    d.seed = 42;
    EXPECT_EQ(make_multisine(d).phases, make_multisine(d).phases);
    const auto base = make_multisine(d);
    EXPECT_EQ(random_phases(base, 9).phases, random_phases(base, 9).phases);
    EXPECT_NE(random_phases(base, 9).phases, random_phases(base, 10).phases);
}

TEST(Multisine, OddGridExcitesExactlyTheListedBins) {
    // f0 = 1 Hz: the sample rate equals the period length.
    MultisineSpec s;
    s.sample_rate_hz = 64.0;
    s.period_samples = 64;
    s.grid_kind = GridKind::odd_only;
    s.excited_lines = {1, 3, 5, 7, 9, 11, 13, 15, 19, 23};
    s.amplitudes.assign(s.excited_lines.size(), 1.0);
    s.phases.assign(s.excited_lines.size(), 0.0);
    s = random_phases(s, 5);
    const Spectrum X = dft(design_multisine(s), s.sample_rate_hz);
    const std::set<std::size_t> lines(s.excited_lines.begin(), s.excited_lines.end());
    for (std::size_t k = 0; k <= 32; ++k) {
        if (lines.count(k)) {
            EXPECT_NEAR(std::abs(X.bins[k]), 32.0, 1e-10) << k;
            EXPECT_DOUBLE_EQ(X.frequency(k), static_cast<double>(k));
        } else {
            EXPECT_LT(std::abs(X.bins[k]), 1e-10) << k;
        }
    }
}

TEST(Multisine, OddRandomSkipLeavesOneDetectionLinePerGroup) {
    MultisineDesign d;
    d.period_samples = 1024;
    d.first_line = 1;
    d.last_line = 159;
    d.grid_kind = GridKind::odd_random_skip;
    d.seed = 8;
    const auto s = make_multisine(d);
    for (std::size_t k : s.excited_lines) EXPECT_EQ(k % 2, 1u);
    // 80 odd lines in 1..159, one removed per group of 4.
    EXPECT_EQ(s.excited_lines.size(), 60u);
    for (std::size_t g = 0; g < 20; ++g) {
        int excited = 0;
        for (std::size_t i = 0; i < 4; ++i) excited += s.is_excited(1 + 2 * (4 * g + i)) ? 1 : 0;
        EXPECT_EQ(excited, 3);
    }
}

TEST(Multisine, RandomPhasesAreUniform) {
    MultisineDesign d;
    d.period_samples = 256;
    d.last_line = 64;
    const auto base = make_multisine(d);
    std::vector<Complex> acc(64);
    for (std::uint64_t r = 0; r < 10000; ++r) {
        const auto s = random_phases(base, r);
        for (std::size_t k = 0; k < 64; ++k) acc[k] += std::polar(1.0, s.phases[k]);
    }
    for (const Complex& a : acc) EXPECT_LT(std::abs(a) / 10000.0, 0.05);
}

TEST(Multisine, ManyLinesLookGaussian) {
    MultisineDesign d;
    d.period_samples = 1024;
    d.last_line = 128;
    const auto base = make_multisine(d);
    double m2 = 0.0, m4 = 0.0;
    std::size_t n = 0;
    for (std::uint64_t r = 0; r < 20; ++r) {
        for (double v : design_multisine(random_phases(base, 100 + r))) {
            m2 += v * v;
            m4 += v * v * v * v;
            ++n;
        }
    }
    m2 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    EXPECT_LT(std::abs(m4 / (m2 * m2) - 3.0), 0.2);
}

TEST(Multisine, InvalidSpecsAreRejected) {
    MultisineSpec s = single_cosine(16);
    s.excited_lines = {8};  // Nyquist
    EXPECT_THROW(s.validate(), ConfigError);
    s = single_cosine(16);
    s.amplitudes = {1.0, 2.0};
    EXPECT_THROW(s.validate(), ConfigError);
    s = single_cosine(16);
    s.grid_kind = GridKind::odd_only;
    s.excited_lines = {2};
    EXPECT_THROW(s.validate(), ConfigError);
    MultisineDesign d;
    d.period_samples = 64;
    d.last_line = 40;
    EXPECT_THROW((void)make_multisine(d), ConfigError);
}

TEST(Dft, ConstantSignal) {
    const std::vector<double> x(32, 2.5);
    const auto X = dft(x);
    EXPECT_NEAR(X.bins[0].real(), 32 * 2.5, 1e-12);
    for (std::size_t k = 1; k < 32; ++k) EXPECT_LT(std::abs(X.bins[k]), 1e-12);
}

TEST(Dft, CosineGivesHalfNAtPlusMinusK) {
    const std::size_t N = 64, k0 = 5;
    std::vector<double> x(N);
    for (std::size_t l = 0; l < N; ++l) x[l] = std::cos(2.0 * std::numbers::pi * static_cast<double>(l * k0) / N);
    const auto X = dft(x);
    EXPECT_NEAR(X.bins[k0].real(), N / 2.0, 1e-12);
    EXPECT_NEAR(X.bins[N - k0].real(), N / 2.0, 1e-12);
}

TEST(Dft, MatchesDirectSummation) {
    const auto x = white_noise(8, 1.0, 77);
    const auto X = dft(x);
    const auto ref = naive_dft(x);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_LT(std::abs(X.bins[k] - ref[k]), 1e-12);
    // Odd, non-power-of-two length as well.
    const auto y = white_noise(15, 1.0, 78);
    const auto Y = dft(y);
    const auto refy = naive_dft(y);
    for (std::size_t k = 0; k < 15; ++k) EXPECT_LT(std::abs(Y.bins[k] - refy[k]), 1e-12);
}

TEST(Dft, InverseRoundTripAndParseval) {
    const auto x = white_noise(1000, 1.0, 4);
    const auto X = dft(x);
    const auto back = idft_real(X.bins);
    double tx = 0.0, fx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(back[i], x[i], 1e-12);
        tx += x[i] * x[i];
        fx += std::norm(X.bins[i]);
    }
    EXPECT_NEAR(tx, fx / 1000.0, 1e-10 * tx);
}

TEST(SplitPeriods, SinglePeriodEqualsWholeRecordDft) {
    SignalRecord rec;
    rec.period_samples = 32;
    rec.num_periods = 1;
    rec.input = white_noise(32, 1.0, 1);
    rec.output = white_noise(32, 1.0, 2);
    const auto parts = split_periods(rec);
    ASSERT_EQ(parts.size(), 1u);
    const auto U = dft(rec.input), Y = dft(rec.output);
    for (std::size_t k = 0; k < 32; ++k) {
        EXPECT_EQ(parts[0].input.bins[k], U.bins[k]);
        EXPECT_EQ(parts[0].output.bins[k], Y.bins[k]);
    }
}

TEST(SplitPeriods, IdenticalPeriodsGiveIdenticalSpectra) {
    const auto p = white_noise(16, 1.0, 3);
    SignalRecord rec;
    rec.period_samples = 16;
    rec.num_periods = 4;
    rec.input = repeat_periods(p, 4);
    rec.output = rec.input;
    const auto parts = split_periods(rec);
    ASSERT_EQ(parts.size(), 4u);
    for (std::size_t i = 1; i < 4; ++i)
        for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(parts[i].output.bins[k], parts[0].output.bins[k]);
}

TEST(SplitPeriods, MeanOfSpectraEqualsSpectrumOfMeanPeriod) {
    const auto p = white_noise(16, 1.0, 3);
    SignalRecord rec;
    rec.period_samples = 16;
    rec.num_periods = 3;
    rec.input = repeat_periods(p, 3);
    const auto v = white_noise(48, 0.1, 9);
    rec.output.resize(48);
    for (std::size_t i = 0; i < 48; ++i) rec.output[i] = rec.input[i] + v[i];
    const auto parts = split_periods(rec);
    EXPECT_GT(std::abs(parts[0].output.bins[3] - parts[1].output.bins[3]), 1e-6);
    std::vector<double> avg(16, 0.0);
    for (std::size_t i = 0; i < 48; ++i) avg[i % 16] += rec.output[i] / 3.0;
    const auto A = dft(avg);
    for (std::size_t k = 0; k < 16; ++k) {
        const Complex m = (parts[0].output.bins[k] + parts[1].output.bins[k] + parts[2].output.bins[k]) / 3.0;
        EXPECT_LT(std::abs(m - A.bins[k]), 1e-12);
    }
}

TEST(SignalRecord, ValidationAndDropPeriods) {
    SignalRecord rec;
    rec.period_samples = 4;
    rec.num_periods = 3;
    rec.input = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    rec.output = rec.input;
    EXPECT_NO_THROW(rec.validate());
    const auto d = rec.drop_periods(1);
    EXPECT_EQ(d.num_periods, 2u);
    EXPECT_EQ(d.input.front(), 4.0);
    EXPECT_THROW((void)rec.drop_periods(3), ConfigError);
    rec.output.pop_back();
    EXPECT_THROW(rec.validate(), ConfigError);
}

TEST(GridKind, StringRoundTrip) {
    for (GridKind g : {GridKind::full, GridKind::odd_only, GridKind::odd_random_skip})
        EXPECT_EQ(grid_kind_from_string(to_string(g)), g);
    EXPECT_THROW((void)grid_kind_from_string("even"), ConfigError);
}
