#include "nlsid/simulators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "nlsid/error.hpp"

namespace nlsid {

namespace {

constexpr double kDivergenceLimit = 1e6;
constexpr std::uint64_t kMeasurementStream = 0x6a09e667f3bcc909ULL;

std::size_t resolve_period(std::size_t period_samples, std::size_t n) {
    if (n == 0) return 0;
    const std::size_t p = period_samples == 0 ? n : period_samples;
    if (n % p != 0)
        throw ConfigError("input length " + std::to_string(n) + " is not a multiple of the period " +
                          std::to_string(p));
    return p;
}

SignalRecord make_record(std::span<const double> u, std::vector<double> y, double fs, std::size_t period,
                         const char* label) {
    SignalRecord rec;
    rec.sample_rate_hz = fs;
    rec.period_samples = resolve_period(period, u.size());
    rec.num_periods = rec.period_samples == 0 ? 0 : u.size() / rec.period_samples;
    rec.input.assign(u.begin(), u.end());
    rec.output = std::move(y);
    rec.label = label;
    return rec;
}

// Input seen by the system: u + w when process noise enters before the nonlinearity.
std::vector<double> effective_input(std::span<const double> u, const NoiseSpec& noise) {
    std::vector<double> ue(u.begin(), u.end());
    if (noise.process_entry == ProcessEntry::before_nonlinearity && noise.process_std > 0.0) {
        const auto w = white_noise(u.size(), noise.process_std, noise.seed);
        for (std::size_t i = 0; i < ue.size(); ++i) ue[i] += w[i];
    }
    return ue;
}

void add_measurement_noise(std::vector<double>& y, const NoiseSpec& noise) {
    if (noise.measurement_std <= 0.0) return;
    const auto v = white_noise(y.size(), noise.measurement_std, noise.seed ^ kMeasurementStream);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[i];
}

void check_noise(const NoiseSpec& noise) {
    if (noise.measurement_std < 0.0 || noise.process_std < 0.0)
        throw ConfigError("noise standard deviations must be nonnegative");
}

}  // namespace

void DuffingParams::validate() const {
    if (!(damping > 0.0)) throw ConfigError("duffing: damping c must be positive");
    if (!(stiffness > 0.0)) throw ConfigError("duffing: linear stiffness k1 must be positive");
    if (oversample < 8) throw ConfigError("duffing: oversample must be at least 8");
}

DuffingParams DuffingParams::with_resonance(double fs, double resonance_fraction, double zeta,
                                            double cubic_stiffness) {
    const double wn = 2.0 * std::numbers::pi * resonance_fraction * fs;
    DuffingParams p;
    p.stiffness = wn * wn;
    p.damping = 2.0 * zeta * wn;
    p.input_gain = wn * wn;
    p.cubic_stiffness = cubic_stiffness;
    return p;
}

void TanksParams::validate() const {
    if (!(k1 > 0 && k2 > 0 && k3 > 0 && k4 > 0)) throw ConfigError("tanks: k1..k4 must be positive");
    if (!(x1_max > 0 && x2_max > 0) || !std::isfinite(x1_max) || !std::isfinite(x2_max))
        throw ConfigError("tanks: overflow levels must be positive and finite");
    if (spill_fraction < 0.0 || spill_fraction > 1.0) throw ConfigError("tanks: spill_fraction must be in [0,1]");
    if (oversample < 1) throw ConfigError("tanks: oversample must be positive");
}

std::vector<double> white_noise(std::size_t n, double std, std::uint64_t seed) {
    std::vector<double> out(n, 0.0);
    if (std <= 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : out) v = dist(rng);
    return out;
}

double eval_poly(std::span<const double> coeffs, double x) {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
    return acc;
}

void RationalFilter::validate() const {
    if (den.empty() || den.front() == 0.0) throw ConfigError("filter: leading denominator coefficient must be nonzero");
    if (num.empty()) throw ConfigError("filter: numerator must not be empty");
    if (den.size() < 2) return;
    // Poles are the roots of z^n a0 + z^(n-1) a1 + ... + an; companion matrix eigenvalues.
    const auto n = static_cast<Eigen::Index>(den.size() - 1);
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) comp(0, j) = -den[static_cast<std::size_t>(j) + 1] / den[0];
    for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    const Eigen::VectorXcd poles = comp.eigenvalues();
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(poles(i)) >= 1.0)
            throw ConfigError("filter: unstable pole with modulus " + std::to_string(std::abs(poles(i))));
}

std::vector<double> RationalFilter::apply(std::span<const double> x) const {
    // Direct form II transposed, zero initial state.
    const std::size_t order = std::max(num.size(), den.size());
    std::vector<double> b(order, 0.0), a(order, 0.0), z(order, 0.0);
    for (std::size_t i = 0; i < num.size(); ++i) b[i] = num[i] / den[0];
    for (std::size_t i = 0; i < den.size(); ++i) a[i] = den[i] / den[0];
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        const double out = b[0] * x[t] + z[0];
        for (std::size_t i = 1; i < order; ++i) {
            const double next = i + 1 < order ? z[i] : 0.0;
            z[i - 1] = b[i] * x[t] - a[i] * out + next;
        }
        y[t] = out;
    }
    return y;
}

Complex RationalFilter::response(double omega) const {
    const Complex zinv = std::polar(1.0, -omega);
    Complex nb = 0.0, da = 0.0, p = 1.0;
    for (std::size_t i = 0; i < std::max(num.size(), den.size()); ++i) {
        if (i < num.size()) nb += num[i] * p;
        if (i < den.size()) da += den[i] * p;
        p *= zinv;
    }
    return nb / da;
}

void BlockOrientedSpec::validate() const {
    first.validate();
    if (structure == BlockStructure::wiener_hammerstein) second.validate();
    if (nonlinearity.empty()) throw ConfigError("block-oriented: nonlinearity polynomial is empty");
}

SignalRecord simulate_duffing(const DuffingParams& params, std::span<const double> u, double fs,
                              const NoiseSpec& noise, std::size_t period_samples) {
    params.validate();
    check_noise(noise);
    if (!(fs > 0.0)) throw ConfigError("duffing: fs must be positive");
    for (double v : u)
        if (!std::isfinite(v)) throw ConfigError("duffing: input contains non-finite samples");

    const auto ue = effective_input(u, noise);
    const double h = 1.0 / (fs * params.oversample);
    const double c = params.damping, k1 = params.stiffness, k3 = params.cubic_stiffness, b = params.input_gain;

    std::array<double, 2> s{0.0, 0.0};
    auto rhs = [&](const std::array<double, 2>& x, double force) -> std::array<double, 2> {
        return {x[1], force - c * x[1] - k1 * x[0] - k3 * x[0] * x[0] * x[0]};
    };

    std::vector<double> y(u.size());
    for (std::size_t l = 0; l < u.size(); ++l) {
        y[l] = s[0];
        if (!std::isfinite(s[0]) || std::abs(s[0]) > kDivergenceLimit)
            throw DivergenceError("duffing simulation", l);
        const double force = b * ue[l];  // zero-order hold over the sample interval
        for (int sub = 0; sub < params.oversample; ++sub) {
            const auto d1 = rhs(s, force);
            const auto d2 = rhs({s[0] + 0.5 * h * d1[0], s[1] + 0.5 * h * d1[1]}, force);
            const auto d3 = rhs({s[0] + 0.5 * h * d2[0], s[1] + 0.5 * h * d2[1]}, force);
            const auto d4 = rhs({s[0] + h * d3[0], s[1] + h * d3[1]}, force);
            s[0] += h / 6.0 * (d1[0] + 2.0 * d2[0] + 2.0 * d3[0] + d4[0]);
            s[1] += h / 6.0 * (d1[1] + 2.0 * d2[1] + 2.0 * d3[1] + d4[1]);
        }
    }
    add_measurement_noise(y, noise);
    return make_record(u, std::move(y), fs, period_samples, "duffing");
}

SignalRecord simulate_tanks(const TanksParams& params, std::span<const double> u, double fs,
                            const NoiseSpec& noise, std::size_t period_samples) {
    params.validate();
    check_noise(noise);
    if (!(fs > 0.0)) throw ConfigError("tanks: fs must be positive");

    const auto ue = effective_input(u, noise);
    const double h = 1.0 / (fs * params.oversample);
    auto root = [](double x) { return std::sqrt(std::max(x, 0.0)); };

    double x1 = 0.0, x2 = 0.0;
    // Returns (dx1, dx2). Overflowing inflow of the upper tank partly spills into the lower tank.
    auto rhs = [&](double a, double bq, double in) -> std::array<double, 2> {
        double d1 = -params.k1 * root(a) + params.k4 * in;
        double d2 = params.k2 * root(a) - params.k3 * root(bq);
        if (a >= params.x1_max && d1 > 0.0) {
            d2 += params.spill_fraction * d1;
            d1 = 0.0;
        }
        if (bq >= params.x2_max && d2 > 0.0) d2 = 0.0;
        return {d1, d2};
    };
    auto clamp1 = [&](double v) { return std::clamp(v, 0.0, params.x1_max); };
    auto clamp2 = [&](double v) { return std::clamp(v, 0.0, params.x2_max); };

    std::vector<double> y(u.size());
    for (std::size_t l = 0; l < u.size(); ++l) {
        y[l] = x2;
        const double in = ue[l];
        for (int sub = 0; sub < params.oversample; ++sub) {
            const auto d1 = rhs(x1, x2, in);
            const auto d2 = rhs(clamp1(x1 + 0.5 * h * d1[0]), clamp2(x2 + 0.5 * h * d1[1]), in);
            const auto d3 = rhs(clamp1(x1 + 0.5 * h * d2[0]), clamp2(x2 + 0.5 * h * d2[1]), in);
            const auto d4 = rhs(clamp1(x1 + h * d3[0]), clamp2(x2 + h * d3[1]), in);
            x1 = clamp1(x1 + h / 6.0 * (d1[0] + 2.0 * d2[0] + 2.0 * d3[0] + d4[0]));
            x2 = clamp2(x2 + h / 6.0 * (d1[1] + 2.0 * d2[1] + 2.0 * d3[1] + d4[1]));
        }
    }
    add_measurement_noise(y, noise);
    return make_record(u, std::move(y), fs, period_samples, "tanks");
}

SignalRecord simulate_static(std::span<const double> poly, std::span<const double> u, const NoiseSpec& noise,
                             std::size_t period_samples, double fs) {
    check_noise(noise);
    const auto ue = effective_input(u, noise);
    std::vector<double> y(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) y[i] = eval_poly(poly, ue[i]);
    add_measurement_noise(y, noise);
    return make_record(u, std::move(y), fs, period_samples, "static");
}

SignalRecord simulate_block_oriented(const BlockOrientedSpec& spec, std::span<const double> u,
                                     const NoiseSpec& noise, std::size_t period_samples, double fs) {
    spec.validate();
    check_noise(noise);
    // Process noise is added to the signal entering the static nonlinearity.
    auto nonlinear = [&](const std::vector<double>& x) {
        auto xe = effective_input(x, noise);
        for (auto& v : xe) v = eval_poly(spec.nonlinearity, v);
        return xe;
    };
    const std::vector<double> uin(u.begin(), u.end());
    std::vector<double> y;
    switch (spec.structure) {
        case BlockStructure::wiener: y = nonlinear(spec.first.apply(uin)); break;
        case BlockStructure::hammerstein: y = spec.first.apply(nonlinear(uin)); break;
        case BlockStructure::wiener_hammerstein: y = spec.second.apply(nonlinear(spec.first.apply(uin))); break;
    }
    add_measurement_noise(y, noise);
    return make_record(u, std::move(y), fs, period_samples, "block_oriented");
}

const char* to_string(BlockStructure s) {
    switch (s) {
        case BlockStructure::wiener: return "wiener";
        case BlockStructure::hammerstein: return "hammerstein";
        case BlockStructure::wiener_hammerstein: return "wiener_hammerstein";
    }
    return "wiener";
}

BlockStructure block_structure_from_string(const std::string& name) {
    if (name == "wiener") return BlockStructure::wiener;
    if (name == "hammerstein") return BlockStructure::hammerstein;
    if (name == "wiener_hammerstein") return BlockStructure::wiener_hammerstein;
    throw ConfigError("unknown block structure '" + name + "'");
}

}  // namespace nlsid
