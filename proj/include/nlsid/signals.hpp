#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nlsid {

using Complex = std::complex<double>;

enum class GridKind { full, odd_only, odd_random_skip };

/**
 * @brief Periodic multisine excitation: u(t) = sum_k U_k cos(2 pi k f0 t + phi_k).
 *
 * Lines, amplitudes and phases are stored as parallel arrays in ascending line order.
 * f0 = sample_rate_hz / period_samples.
 */
struct MultisineSpec {
    double sample_rate_hz = 1.0;
    std::size_t period_samples = 0;
    std::vector<std::size_t> excited_lines;
    std::vector<double> amplitudes;
    std::vector<double> phases;
    GridKind grid_kind = GridKind::full;
    std::uint64_t rng_seed = 0;

    [[nodiscard]] double f0() const { return sample_rate_hz / static_cast<double>(period_samples); }
    [[nodiscard]] bool is_excited(std::size_t line) const;
    /// Throws ConfigError when an invariant is broken.
    void validate() const;
};

/// Options for building a multisine with a flat amplitude spectrum.
struct MultisineDesign {
    double sample_rate_hz = 1.0;
    std::size_t period_samples = 1024;
    std::size_t first_line = 1;
    std::size_t last_line = 100;
    GridKind grid_kind = GridKind::full;
    double rms = 1.0;
    std::uint64_t seed = 0;
    /// odd_random_skip: one detection line is removed per group of this many odd lines.
    std::size_t detection_group = 4;
};

/// Multi-period sampled input/output record.
struct SignalRecord {
    double sample_rate_hz = 1.0;
    std::size_t period_samples = 0;
    std::size_t num_periods = 0;
    std::vector<double> input;
    std::vector<double> output;
    std::string label;

    [[nodiscard]] std::size_t size() const { return input.size(); }
    void validate() const;
    /// Copy without the first `periods` periods.
    [[nodiscard]] SignalRecord drop_periods(std::size_t periods) const;
};

struct Spectrum {
    std::vector<Complex> bins;
    double sample_rate_hz = 1.0;

    [[nodiscard]] std::size_t size() const { return bins.size(); }
    [[nodiscard]] double frequency(std::size_t k) const {
        return static_cast<double>(k) * sample_rate_hz / static_cast<double>(bins.size());
    }
};

struct PeriodSpectra {
    Spectrum input;
    Spectrum output;
};

/// Builds the line grid, flat amplitudes scaled to the requested RMS and seeded random phases.
[[nodiscard]] MultisineSpec make_multisine(const MultisineDesign& design);

/// Samples one period of the multisine.
[[nodiscard]] std::vector<double> design_multisine(const MultisineSpec& spec);

/// Tiles `periods` copies of one period.
[[nodiscard]] std::vector<double> repeat_periods(std::span<const double> period, std::size_t periods);

/// Draws phases i.i.d. uniform on [0, 2 pi) from a generator seeded with `seed`.
[[nodiscard]] MultisineSpec random_phases(const MultisineSpec& spec, std::uint64_t seed);

/// Forward DFT, unnormalized: X(k) = sum_l x(l) exp(-j 2 pi k l / N).
[[nodiscard]] Spectrum dft(std::span<const double> signal, double sample_rate_hz = 1.0);
[[nodiscard]] std::vector<Complex> dft_complex(std::span<const Complex> signal);
/// Inverse DFT scaled by 1/N; returns the real part.
[[nodiscard]] std::vector<double> idft_real(std::span<const Complex> bins);

[[nodiscard]] std::vector<PeriodSpectra> split_periods(const SignalRecord& rec);

[[nodiscard]] double rms(std::span<const double> x);
[[nodiscard]] double mean(std::span<const double> x);

[[nodiscard]] const char* to_string(GridKind kind);
[[nodiscard]] GridKind grid_kind_from_string(const std::string& name);

}  // namespace nlsid
