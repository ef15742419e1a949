#include "nlsid/nonparam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nlsid/error.hpp"

namespace nlsid {

namespace {

constexpr double kTiny = 1e-300;

double excess_db(double signal_power, double floor_power) {
    return 10.0 * std::log10((signal_power + kTiny) / (floor_power + kTiny));
}

}  // namespace

std::size_t DistortionReport::count(LineClass cls) const {
    return static_cast<std::size_t>(
        std::count_if(lines.begin(), lines.end(), [cls](const LineReport& l) { return l.cls == cls; }));
}

SampleStatistics sample_statistics(const SignalRecord& rec, std::size_t discard_periods) {
    rec.validate();
    if (rec.num_periods < discard_periods + 2)
        throw ConfigError("sample statistics: need at least 2 retained periods (have " +
                          std::to_string(rec.num_periods) + ", discarding " + std::to_string(discard_periods) + ")");
    const SignalRecord kept = discard_periods > 0 ? rec.drop_periods(discard_periods) : rec;
    const auto spectra = split_periods(kept);
    const std::size_t p = spectra.size();
    const std::size_t bins = kept.period_samples / 2 + 1;

    SampleStatistics st;
    st.sample_rate_hz = kept.sample_rate_hz;
    st.period_samples = kept.period_samples;
    st.num_periods = p;
    st.input_mean.assign(bins, 0.0);
    st.output_mean.assign(bins, 0.0);
    st.input_var.assign(bins, 0.0);
    st.output_var.assign(bins, 0.0);
    st.io_covar.assign(bins, 0.0);

    const double inv_p = 1.0 / static_cast<double>(p);
    for (const auto& s : spectra)
        for (std::size_t k = 0; k < bins; ++k) {
            st.input_mean[k] += s.input.bins[k] * inv_p;
            st.output_mean[k] += s.output.bins[k] * inv_p;
        }
    const double inv_p1 = 1.0 / static_cast<double>(p - 1);
    for (const auto& s : spectra)
        for (std::size_t k = 0; k < bins; ++k) {
            const Complex du = s.input.bins[k] - st.input_mean[k];
            const Complex dy = s.output.bins[k] - st.output_mean[k];
            st.input_var[k] += std::norm(du) * inv_p1;
            st.output_var[k] += std::norm(dy) * inv_p1;
            st.io_covar[k] += dy * std::conj(du) * inv_p1;
        }
    return st;
}

DistortionReport classify_lines(const MultisineSpec& spec, const SampleStatistics& stats, double threshold_db) {
    spec.validate();
    if (spec.grid_kind == GridKind::full)
        throw ConfigError("classify_lines: a full grid has no detection lines; use an odd grid");
    if (stats.period_samples != spec.period_samples)
        throw ConfigError("classify_lines: statistics and multisine have different period lengths");
    if (spec.excited_lines.empty()) throw ConfigError("classify_lines: multisine has no excited lines");

    DistortionReport rep;
    rep.threshold_db = threshold_db;
    rep.num_periods = stats.num_periods;
    if (stats.num_periods < 8)
        rep.warnings.push_back("fewer than 8 periods: noise floor estimate is unreliable");

    const std::size_t kmax = spec.excited_lines.back();
    const double factor = std::pow(10.0, threshold_db / 20.0);
    const double sqrt_p = std::sqrt(static_cast<double>(stats.num_periods));
    double even_sig = 0, even_floor = 0, odd_sig = 0, odd_floor = 0;

    for (std::size_t k = 1; k < stats.num_bins(); ++k) {
        LineReport l;
        l.line = k;
        l.frequency_hz = static_cast<double>(k) * stats.sample_rate_hz / static_cast<double>(stats.period_samples);
        l.magnitude = std::abs(stats.output_mean[k]);
        l.noise_floor = std::sqrt(stats.output_var[k]) / sqrt_p;
        if (k > kmax) l.cls = LineClass::out_of_band;
        else if (spec.is_excited(k)) l.cls = LineClass::excited;
        else if (k % 2 == 0) l.cls = LineClass::even;
        else l.cls = LineClass::odd_detection;

        if (l.cls == LineClass::even) {
            even_sig += l.magnitude * l.magnitude;
            even_floor += l.noise_floor * l.noise_floor;
        } else if (l.cls == LineClass::odd_detection) {
            odd_sig += l.magnitude * l.magnitude;
            odd_floor += l.noise_floor * l.noise_floor;
        }
        l.distorted = l.cls != LineClass::excited && l.magnitude > factor * l.noise_floor;
        rep.lines.push_back(l);
    }
    rep.even_excess_db = excess_db(even_sig, even_floor);
    rep.odd_excess_db = excess_db(odd_sig, odd_floor);
    rep.distortion_excess_db = excess_db(even_sig + odd_sig, even_floor + odd_floor);
    if (rep.count(LineClass::odd_detection) == 0)
        rep.warnings.push_back("no odd detection lines in band: odd distortions are not observable");
    return rep;
}

std::set<std::size_t> output_frequency_set(const std::set<std::size_t>& excited, int degree, std::size_t max_line) {
    if (degree < 1) throw ConfigError("output_frequency_set: degree must be at least 1");
    // Signed partial sums of exactly `degree` terms.
    std::set<long long> sums{0};
    for (int d = 0; d < degree; ++d) {
        std::set<long long> next;
        for (long long s : sums)
            for (std::size_t k : excited) {
                next.insert(s + static_cast<long long>(k));
                next.insert(s - static_cast<long long>(k));
            }
        sums = std::move(next);
    }
    std::set<std::size_t> out;
    for (long long s : sums) {
        const auto a = static_cast<std::size_t>(s < 0 ? -s : s);
        if (a <= max_line) out.insert(a);
    }
    return out;
}

ProcessNoiseReport detect_process_noise(const SignalRecord& rec, std::size_t smoothing_window, double threshold,
                                        std::size_t discard_periods) {
    rec.validate();
    if (rec.num_periods < discard_periods + 4)
        throw ConfigError("process-noise detection: need at least 4 retained periods");
    const SignalRecord kept = discard_periods > 0 ? rec.drop_periods(discard_periods) : rec;
    const std::size_t n = kept.period_samples;
    const std::size_t p = kept.num_periods;
    const std::size_t window = smoothing_window == 0 ? std::max<std::size_t>(1, n / 32) : smoothing_window;
    if (window > n) throw ConfigError("process-noise detection: smoothing window exceeds the period");

    // Variance across periods of the non-periodic part, per within-period index.
    std::vector<double> var(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double m = 0.0;
        for (std::size_t l = 0; l < p; ++l) m += kept.output[l * n + t];
        m /= static_cast<double>(p);
        double s = 0.0;
        for (std::size_t l = 0; l < p; ++l) {
            const double d = kept.output[l * n + t] - m;
            s += d * d;
        }
        var[t] = s / static_cast<double>(p - 1);
    }

    // Circular rectangular moving average, centred.
    ProcessNoiseReport rep;
    rep.threshold = threshold;
    rep.time_variance.assign(n, 0.0);
    const std::size_t half = window / 2;
    for (std::size_t t = 0; t < n; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < window; ++i) s += var[(t + n + i - half) % n];
        rep.time_variance[t] = s / static_cast<double>(window);
    }

    // Variances at rounding level (exactly periodic data) count as zero.
    double power = 0.0;
    for (double v : kept.output) power += v * v;
    const double floor = 1e-24 * power / static_cast<double>(kept.output.size());
    const auto [lo, hi] = std::minmax_element(rep.time_variance.begin(), rep.time_variance.end());
    if (*hi <= floor) rep.stationarity_ratio = 1.0;
    else if (*lo <= 0.0) rep.stationarity_ratio = std::numeric_limits<double>::infinity();
    else rep.stationarity_ratio = *hi / *lo;
    rep.verdict = rep.stationarity_ratio > threshold ? NoiseVerdict::nonstationary : NoiseVerdict::stationary;
    return rep;
}

const char* to_string(LineClass cls) {
    switch (cls) {
        case LineClass::excited: return "excited";
        case LineClass::odd_detection: return "odd_detection";
        case LineClass::even: return "even";
        case LineClass::out_of_band: return "out_of_band";
    }
    return "out_of_band";
}

const char* to_string(NoiseVerdict v) {
    return v == NoiseVerdict::stationary ? "stationary" : "nonstationary";
}

}  // namespace nlsid
