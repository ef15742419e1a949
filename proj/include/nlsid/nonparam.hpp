#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "nlsid/signals.hpp"

namespace nlsid {

/// Per-bin sample means and (co)variances over periods, bins 0..N/2.
struct SampleStatistics {
    double sample_rate_hz = 1.0;
    std::size_t period_samples = 0;
    std::size_t num_periods = 0;  // periods used (after discarding)
    std::vector<Complex> input_mean;
    std::vector<Complex> output_mean;
    std::vector<double> input_var;
    std::vector<double> output_var;
    std::vector<Complex> io_covar;  // (Y - Ybar)(U - Ubar)^H

    [[nodiscard]] std::size_t num_bins() const { return output_mean.size(); }
    /// Variance of the sample mean of Y at bin k.
    [[nodiscard]] double output_mean_var(std::size_t k) const {
        return output_var[k] / static_cast<double>(num_periods);
    }
};

enum class LineClass { excited, odd_detection, even, out_of_band };

struct LineReport {
    std::size_t line = 0;
    double frequency_hz = 0.0;
    LineClass cls = LineClass::out_of_band;
    double magnitude = 0.0;    // |Ybar(k)|
    double noise_floor = 0.0;  // sigma_Y(k) / sqrt(P)
    bool distorted = false;    // non-excited line above floor by the threshold
};

struct DistortionReport {
    std::vector<LineReport> lines;  // bins 1..N/2
    double threshold_db = 6.0;
    std::size_t num_periods = 0;
    /// Power-averaged level of each line class relative to its noise floor, in dB.
    double even_excess_db = 0.0;
    double odd_excess_db = 0.0;
    /// Same measure over all non-excited in-band lines (even and odd together).
    double distortion_excess_db = 0.0;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t count(LineClass cls) const;
};

enum class NoiseVerdict { stationary, nonstationary };

struct ProcessNoiseReport {
    std::vector<double> time_variance;  // length N, smoothed
    double stationarity_ratio = 1.0;
    double threshold = 4.0;
    NoiseVerdict verdict = NoiseVerdict::stationary;
};

/// Requires at least two retained periods.
[[nodiscard]] SampleStatistics sample_statistics(const SignalRecord& rec, std::size_t discard_periods = 0);

/// Requires an odd grid; a full grid leaves no detection lines.
[[nodiscard]] DistortionReport classify_lines(const MultisineSpec& spec, const SampleStatistics& stats,
                                              double threshold_db = 6.0);

/// { |sum_{i=1..degree} +-k_i| : k_i in excited } clipped to [0, max_line].
[[nodiscard]] std::set<std::size_t> output_frequency_set(const std::set<std::size_t>& excited, int degree,
                                                         std::size_t max_line);

/// smoothing_window == 0 selects N/32 (at least 1).
[[nodiscard]] ProcessNoiseReport detect_process_noise(const SignalRecord& rec, std::size_t smoothing_window = 0,
                                                      double threshold = 4.0, std::size_t discard_periods = 0);

[[nodiscard]] const char* to_string(LineClass cls);
[[nodiscard]] const char* to_string(NoiseVerdict v);

}  // namespace nlsid
