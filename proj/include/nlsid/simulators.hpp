#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nlsid/signals.hpp"

namespace nlsid {

/// Forced Duffing oscillator  y'' + c y' + k1 y + k3 y^3 = b u.
struct DuffingParams {
    double damping = 0.0;        // c
    double stiffness = 0.0;      // k1
    double cubic_stiffness = 0.0;  // k3
    double input_gain = 0.0;     // b
    int oversample = 16;

    void validate() const;

    /// Synthetic defaults: resonance at `resonance_fraction * fs`, damping ratio `zeta`, unit static gain.
    static DuffingParams with_resonance(double fs, double resonance_fraction = 0.1, double zeta = 0.05,
                                        double cubic_stiffness = 0.0);
};

/// Cascaded tanks. `spill_fraction` is the share of the upper-tank overflow that reaches the lower tank.
struct TanksParams {
    double k1 = 0.0, k2 = 0.0, k3 = 0.0, k4 = 0.0;
    double x1_max = 10.0, x2_max = 10.0;
    double spill_fraction = 0.0;
    int oversample = 16;

    void validate() const;
};

/// Stable rational discrete-time filter b(q^-1)/a(q^-1), a[0] != 0.
struct RationalFilter {
    std::vector<double> num;
    std::vector<double> den{1.0};

    /// Throws ConfigError if a pole lies on or outside the unit circle.
    void validate() const;
    [[nodiscard]] std::vector<double> apply(std::span<const double> x) const;
    [[nodiscard]] Complex response(double omega) const;
};

enum class BlockStructure { wiener, hammerstein, wiener_hammerstein };

struct BlockOrientedSpec {
    BlockStructure structure = BlockStructure::wiener;
    RationalFilter first;   // L (wiener/hammerstein) or L1 (wiener_hammerstein)
    RationalFilter second;  // L2 for wiener_hammerstein; unused otherwise
    std::vector<double> nonlinearity;  // polynomial coefficients a_0, a_1, ...

    void validate() const;
};

enum class ProcessEntry { none, before_nonlinearity };

struct NoiseSpec {
    double measurement_std = 0.0;
    double process_std = 0.0;
    ProcessEntry process_entry = ProcessEntry::none;
    std::uint64_t seed = 0;
};

/// Seeded white Gaussian noise; identical seeds give identical sequences.
[[nodiscard]] std::vector<double> white_noise(std::size_t n, double std, std::uint64_t seed);

[[nodiscard]] double eval_poly(std::span<const double> coeffs, double x);

/// The record's period/period-count metadata is taken from the arguments; the input array may
/// have any length that is a multiple of `period_samples`.
[[nodiscard]] SignalRecord simulate_duffing(const DuffingParams& params, std::span<const double> u, double fs,
                                            const NoiseSpec& noise, std::size_t period_samples = 0);
[[nodiscard]] SignalRecord simulate_tanks(const TanksParams& params, std::span<const double> u, double fs,
                                          const NoiseSpec& noise, std::size_t period_samples = 0);
[[nodiscard]] SignalRecord simulate_static(std::span<const double> poly, std::span<const double> u,
                                           const NoiseSpec& noise, std::size_t period_samples = 0,
                                           double fs = 1.0);
[[nodiscard]] SignalRecord simulate_block_oriented(const BlockOrientedSpec& spec, std::span<const double> u,
                                                   const NoiseSpec& noise, std::size_t period_samples = 0,
                                                   double fs = 1.0);

[[nodiscard]] const char* to_string(BlockStructure s);
[[nodiscard]] BlockStructure block_structure_from_string(const std::string& name);

}  // namespace nlsid
