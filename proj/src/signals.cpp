#include "nlsid/signals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <unsupported/Eigen/FFT>

#include "nlsid/error.hpp"

namespace nlsid {

bool MultisineSpec::is_excited(std::size_t line) const {
    return std::binary_search(excited_lines.begin(), excited_lines.end(), line);
}

void MultisineSpec::validate() const {
    if (period_samples == 0) throw ConfigError("multisine: period_samples must be positive");
    if (!(sample_rate_hz > 0.0)) throw ConfigError("multisine: sample_rate_hz must be positive");
    if (amplitudes.size() != excited_lines.size() || phases.size() != excited_lines.size())
        throw ConfigError("multisine: lines, amplitudes and phases must have equal length");
    if (!std::is_sorted(excited_lines.begin(), excited_lines.end()) ||
        std::adjacent_find(excited_lines.begin(), excited_lines.end()) != excited_lines.end())
        throw ConfigError("multisine: excited lines must be strictly increasing");
    for (std::size_t i = 0; i < excited_lines.size(); ++i) {
        const std::size_t k = excited_lines[i];
        if (k == 0) throw ConfigError("multisine: line 0 (DC) cannot be excited");
        if (2 * k >= period_samples)
            throw ConfigError("multisine: line " + std::to_string(k) + " aliases (must be < N/2 = " +
                              std::to_string(period_samples / 2) + ")");
        if (grid_kind != GridKind::full && k % 2 == 0)
            throw ConfigError("multisine: odd grid contains even line " + std::to_string(k));
        if (!(amplitudes[i] >= 0.0)) throw ConfigError("multisine: amplitudes must be nonnegative");
    }
}

void SignalRecord::validate() const {
    if (period_samples == 0) throw ConfigError("record: period_samples must be positive");
    if (num_periods < 1) throw ConfigError("record: at least one period required");
    if (!(sample_rate_hz > 0.0)) throw ConfigError("record: sample_rate_hz must be positive");
    const std::size_t n = period_samples * num_periods;
    if (input.size() != n || output.size() != n)
        throw ConfigError("record '" + label + "': expected " + std::to_string(n) + " samples, got u=" +
                          std::to_string(input.size()) + " y=" + std::to_string(output.size()));
}

SignalRecord SignalRecord::drop_periods(std::size_t periods) const {
    validate();
    if (periods >= num_periods)
        throw ConfigError("record: cannot discard " + std::to_string(periods) + " of " +
                          std::to_string(num_periods) + " periods");
    SignalRecord out = *this;
    const auto skip = static_cast<std::ptrdiff_t>(periods * period_samples);
    out.input.assign(input.begin() + skip, input.end());
    out.output.assign(output.begin() + skip, output.end());
    out.num_periods = num_periods - periods;
    return out;
}

MultisineSpec make_multisine(const MultisineDesign& d) {
    if (d.first_line < 1 || d.last_line < d.first_line)
        throw ConfigError("multisine design: need 1 <= first_line <= last_line");
    if (d.detection_group < 2 && d.grid_kind == GridKind::odd_random_skip)
        throw ConfigError("multisine design: detection_group must be at least 2");

    MultisineSpec spec;
    spec.sample_rate_hz = d.sample_rate_hz;
    spec.period_samples = d.period_samples;
    spec.grid_kind = d.grid_kind;
    spec.rng_seed = d.seed;

    std::vector<std::size_t> candidates;
    for (std::size_t k = d.first_line; k <= d.last_line; ++k) {
        if (d.grid_kind != GridKind::full && k % 2 == 0) continue;
        candidates.push_back(k);
    }

    std::mt19937_64 rng(d.seed);
    if (d.grid_kind == GridKind::odd_random_skip) {
        // Groups of consecutive odd candidates; exactly one line per group becomes a detection line.
        // A trailing partial group of size 1 stays excited.
        for (std::size_t start = 0; start < candidates.size(); start += d.detection_group) {
            const std::size_t len = std::min(d.detection_group, candidates.size() - start);
            if (len < 2) {
                spec.excited_lines.push_back(candidates[start]);
                continue;
            }
            std::uniform_int_distribution<std::size_t> pick(0, len - 1);
            const std::size_t skip = pick(rng);
            for (std::size_t i = 0; i < len; ++i)
                if (i != skip) spec.excited_lines.push_back(candidates[start + i]);
        }
    } else {
        spec.excited_lines = candidates;
    }

    const std::size_t f = spec.excited_lines.size();
    if (f == 0) throw ConfigError("multisine design: no excited lines");
    // RMS of a multisine is sqrt(sum U_k^2 / 2).
    const double amp = d.rms * std::sqrt(2.0 / static_cast<double>(f));
    spec.amplitudes.assign(f, amp);
    spec.phases.assign(f, 0.0);
    spec = random_phases(spec, d.seed);
    spec.validate();
    return spec;
}

std::vector<double> design_multisine(const MultisineSpec& spec) {
    spec.validate();
    const std::size_t n = spec.period_samples;
    std::vector<double> u(n, 0.0);
    // Integer phase index (k*l mod N) keeps the signal exactly N-periodic.
    const double w = 2.0 * std::numbers::pi / static_cast<double>(n);
    for (std::size_t i = 0; i < spec.excited_lines.size(); ++i) {
        const std::size_t k = spec.excited_lines[i];
        const double a = spec.amplitudes[i];
        const double ph = spec.phases[i];
        if (a == 0.0) continue;
        for (std::size_t l = 0; l < n; ++l) {
            const std::size_t idx = (k * l) % n;
            u[l] += a * std::cos(w * static_cast<double>(idx) + ph);
        }
    }
    return u;
}

std::vector<double> repeat_periods(std::span<const double> period, std::size_t periods) {
    std::vector<double> out;
    out.reserve(period.size() * periods);
    for (std::size_t p = 0; p < periods; ++p) out.insert(out.end(), period.begin(), period.end());
    return out;
}

MultisineSpec random_phases(const MultisineSpec& spec, std::uint64_t seed) {
    MultisineSpec out = spec;
    out.rng_seed = seed;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(0.0, 2.0 * std::numbers::pi);
    out.phases.resize(out.excited_lines.size());
    for (auto& ph : out.phases) {
        ph = dist(rng);
        if (ph >= 2.0 * std::numbers::pi) ph = 0.0;
    }
    return out;
}

Spectrum dft(std::span<const double> signal, double sample_rate_hz) {
    Spectrum s;
    s.sample_rate_hz = sample_rate_hz;
    if (signal.empty()) return s;
    Eigen::FFT<double> fft;
    std::vector<double> in(signal.begin(), signal.end());
    fft.fwd(s.bins, in);
    return s;
}

std::vector<Complex> dft_complex(std::span<const Complex> signal) {
    std::vector<Complex> out;
    if (signal.empty()) return out;
    Eigen::FFT<double> fft;
    std::vector<Complex> in(signal.begin(), signal.end());
    fft.fwd(out, in);
    return out;
}

std::vector<double> idft_real(std::span<const Complex> bins) {
    std::vector<double> out(bins.size(), 0.0);
    if (bins.empty()) return out;
    Eigen::FFT<double> fft;
    std::vector<Complex> in(bins.begin(), bins.end());
    std::vector<Complex> tmp;
    fft.inv(tmp, in);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tmp[i].real();
    return out;
}

std::vector<PeriodSpectra> split_periods(const SignalRecord& rec) {
    rec.validate();
    std::vector<PeriodSpectra> out;
    out.reserve(rec.num_periods);
    const std::size_t n = rec.period_samples;
    for (std::size_t p = 0; p < rec.num_periods; ++p) {
        std::span<const double> u(rec.input.data() + p * n, n);
        std::span<const double> y(rec.output.data() + p * n, n);
        out.push_back({dft(u, rec.sample_rate_hz), dft(y, rec.sample_rate_hz)});
    }
    return out;
}

double rms(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

const char* to_string(GridKind kind) {
    switch (kind) {
        case GridKind::full: return "full";
        case GridKind::odd_only: return "odd_only";
        case GridKind::odd_random_skip: return "odd_random_skip";
    }
    return "full";
}

GridKind grid_kind_from_string(const std::string& name) {
    if (name == "full") return GridKind::full;
    if (name == "odd_only") return GridKind::odd_only;
    if (name == "odd_random_skip") return GridKind::odd_random_skip;
    throw ConfigError("unknown grid_kind '" + name + "'");
}

}  // namespace nlsid
