#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "nlsid/signals.hpp"

namespace nlsid {

/**
 * @brief Nonparametric best linear approximation on the excited lines.
 *
 * Both variances refer to the realization-averaged estimate `frf`:
 * `frf_variance_total` is the between-realization sample variance divided by M (noise plus
 * stochastic nonlinear contributions), `frf_variance_noise` is the within-realization noise
 * variance propagated through Y/U to first order, also divided by M.
 */
struct BlaModel {
    double sample_rate_hz = 1.0;
    std::size_t period_samples = 0;
    std::vector<std::size_t> lines;
    std::vector<Complex> frf;
    std::vector<double> frf_variance_total;
    std::vector<double> frf_variance_noise;
    std::size_t num_realizations = 0;
    std::size_t num_periods = 0;

    [[nodiscard]] double frequency(std::size_t i) const {
        return static_cast<double>(lines[i]) * sample_rate_hz / static_cast<double>(period_samples);
    }
};

struct BlaOptions {
    std::size_t discard_periods = 1;
};

/// All records must share the period length; each realization needs at least one retained period.
[[nodiscard]] BlaModel estimate_bla_spectral(const std::vector<SignalRecord>& records, const MultisineSpec& spec,
                                             const BlaOptions& options = {});

struct StochasticResidual {
    std::vector<double> residual;     // y_s(t), same length as the record
    double input_correlation = 0.0;   // corr(y_s, u)
    double squared_correlation = 0.0; // corr(y_s^2, u^2)
};

/// y_s = y - G_BLA u with G_BLA applied per period in the frequency domain.
[[nodiscard]] StochasticResidual stochastic_residual(const SignalRecord& rec, const BlaModel& model);

/// Sample correlation coefficient; 0 when either signal has zero variance.
[[nodiscard]] double correlation(std::span<const double> a, std::span<const double> b);

struct ResonanceRow {
    double level = 0.0;
    std::optional<double> resonance_hz;  // empty when the FRF peak sits at a band edge
    double distortion_level = 0.0;       // mean relative std of the FRF across realizations
};

/// Produces a multi-period record at excitation RMS `level` for realization seed `seed`.
using LevelSimulator = std::function<SignalRecord(double level, std::uint64_t seed)>;

struct ShiftStudyOptions {
    MultisineSpec grid;  // line grid; phases are redrawn per realization by the simulator
    std::size_t realizations = 4;
    std::uint64_t seed = 1;
    BlaOptions bla;
};

[[nodiscard]] std::vector<ResonanceRow> bla_shift_study(const LevelSimulator& system, const std::vector<double>& levels,
                                                        const ShiftStudyOptions& options);

/// 3-point parabolic peak location on |G| around the largest line; empty if the max is at an edge.
[[nodiscard]] std::optional<double> locate_resonance(const BlaModel& model);

}  // namespace nlsid
