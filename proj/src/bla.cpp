#include "nlsid/bla.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nlsid/error.hpp"
#include "nlsid/nonparam.hpp"

namespace nlsid {

BlaModel estimate_bla_spectral(const std::vector<SignalRecord>& records, const MultisineSpec& spec,
                               const BlaOptions& options) {
    if (records.empty()) throw ConfigError("BLA: at least one realization is required");
    spec.validate();
    const std::size_t n = spec.period_samples;
    const std::size_t lines = spec.excited_lines.size();
    const double min_input = 1e3 * std::numeric_limits<double>::epsilon();

    BlaModel model;
    model.sample_rate_hz = spec.sample_rate_hz;
    model.period_samples = n;
    model.lines = spec.excited_lines;
    model.num_realizations = records.size();

    std::vector<std::vector<Complex>> per_real(records.size(), std::vector<Complex>(lines));
    std::vector<double> noise_var_sum(lines, 0.0);

    for (std::size_t m = 0; m < records.size(); ++m) {
        const auto& rec = records[m];
        rec.validate();
        if (rec.period_samples != n)
            throw ConfigError("BLA: realization " + std::to_string(m) + " has period " +
                              std::to_string(rec.period_samples) + ", grid expects " + std::to_string(n));
        if (rec.num_periods <= options.discard_periods)
            throw ConfigError("BLA: realization " + std::to_string(m) + " has no periods left after discarding");
        const SignalRecord kept = options.discard_periods > 0 ? rec.drop_periods(options.discard_periods) : rec;
        const std::size_t p = kept.num_periods;
        model.num_periods = p;

        // Sample means per line; variances when at least two periods remain.
        std::vector<Complex> um(lines, 0.0), ym(lines, 0.0);
        const auto spectra = split_periods(kept);
        for (const auto& s : spectra)
            for (std::size_t i = 0; i < lines; ++i) {
                um[i] += s.input.bins[spec.excited_lines[i]] / static_cast<double>(p);
                ym[i] += s.output.bins[spec.excited_lines[i]] / static_cast<double>(p);
            }
        for (std::size_t i = 0; i < lines; ++i) {
            if (std::abs(um[i]) < min_input)
                throw NumericError("BLA: input spectrum vanishes at excited line " +
                                   std::to_string(spec.excited_lines[i]) + " in realization " + std::to_string(m));
            per_real[m][i] = ym[i] / um[i];
        }
        if (p >= 2) {
            const auto st = sample_statistics(kept, 0);
            for (std::size_t i = 0; i < lines; ++i) {
                const std::size_t k = spec.excited_lines[i];
                const Complex g = per_real[m][i];
                // Delta method for the ratio of means.
                const double rel = st.output_var[k] / std::norm(ym[i]) + st.input_var[k] / std::norm(um[i]) -
                                   2.0 * std::real(st.io_covar[k] / (ym[i] * std::conj(um[i])));
                noise_var_sum[i] += std::max(0.0, std::norm(g) * rel / static_cast<double>(p));
            }
        }
    }

    const double mcount = static_cast<double>(records.size());
    model.frf.assign(lines, 0.0);
    model.frf_variance_total.assign(lines, 0.0);
    model.frf_variance_noise.assign(lines, 0.0);
    for (std::size_t i = 0; i < lines; ++i) {
        for (std::size_t m = 0; m < records.size(); ++m) model.frf[i] += per_real[m][i] / mcount;
        model.frf_variance_noise[i] = noise_var_sum[i] / (mcount * mcount);
        if (records.size() >= 2) {
            double s = 0.0;
            for (std::size_t m = 0; m < records.size(); ++m) s += std::norm(per_real[m][i] - model.frf[i]);
            model.frf_variance_total[i] = s / (mcount - 1.0) / mcount;
        } else {
            model.frf_variance_total[i] = model.frf_variance_noise[i];
        }
    }
    return model;
}

double correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw ConfigError("correlation: signals must have equal nonzero length");
    const double ma = mean(a), mb = mean(b);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

StochasticResidual stochastic_residual(const SignalRecord& rec, const BlaModel& model) {
    rec.validate();
    if (rec.period_samples != model.period_samples)
        throw ConfigError("stochastic residual: record period differs from the BLA grid");
    const std::size_t n = rec.period_samples;
    StochasticResidual out;
    out.residual.resize(rec.size());
    for (std::size_t p = 0; p < rec.num_periods; ++p) {
        const auto u = dft(std::span<const double>(rec.input.data() + p * n, n));
        std::vector<Complex> yl(n, 0.0);
        for (std::size_t i = 0; i < model.lines.size(); ++i) {
            const std::size_t k = model.lines[i];
            yl[k] = model.frf[i] * u.bins[k];
            yl[n - k] = std::conj(yl[k]);
        }
        const auto ylin = idft_real(yl);
        for (std::size_t t = 0; t < n; ++t) out.residual[p * n + t] = rec.output[p * n + t] - ylin[t];
    }
    out.input_correlation = correlation(out.residual, rec.input);
    std::vector<double> ys2(out.residual.size()), u2(rec.input.size());
    for (std::size_t i = 0; i < ys2.size(); ++i) {
        ys2[i] = out.residual[i] * out.residual[i];
        u2[i] = rec.input[i] * rec.input[i];
    }
    out.squared_correlation = correlation(ys2, u2);
    return out;
}

std::optional<double> locate_resonance(const BlaModel& model) {
    const std::size_t n = model.frf.size();
    if (n < 3) return std::nullopt;
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(model.frf[i]) > std::abs(model.frf[best])) best = i;
    if (best == 0 || best + 1 == n) return std::nullopt;
    const double x0 = model.frequency(best - 1), x1 = model.frequency(best), x2 = model.frequency(best + 1);
    const double m0 = std::abs(model.frf[best - 1]), m1 = std::abs(model.frf[best]), m2 = std::abs(model.frf[best + 1]);
    const double num = (x1 - x0) * (x1 - x0) * (m1 - m2) - (x1 - x2) * (x1 - x2) * (m1 - m0);
    const double den = (x1 - x0) * (m1 - m2) - (x1 - x2) * (m1 - m0);
    if (den == 0.0) return x1;
    return x1 - 0.5 * num / den;
}

std::vector<ResonanceRow> bla_shift_study(const LevelSimulator& system, const std::vector<double>& levels,
                                          const ShiftStudyOptions& options) {
    if (levels.size() < 2) throw ConfigError("shift study: at least two excitation levels are required");
    if (options.realizations < 1) throw ConfigError("shift study: at least one realization is required");
    std::vector<ResonanceRow> rows;
    for (double level : levels) {
        std::vector<SignalRecord> recs;
        // Same seeds at every level so the levels differ only in amplitude.
        for (std::size_t r = 0; r < options.realizations; ++r) recs.push_back(system(level, options.seed + r));
        const auto bla = estimate_bla_spectral(recs, options.grid, options.bla);
        ResonanceRow row;
        row.level = level;
        row.resonance_hz = locate_resonance(bla);
        double acc = 0.0;
        for (std::size_t i = 0; i < bla.frf.size(); ++i) {
            const double single_std = std::sqrt(bla.frf_variance_total[i] * static_cast<double>(bla.num_realizations));
            acc += single_std / std::max(std::abs(bla.frf[i]), 1e-300);
        }
        row.distortion_level = bla.frf.empty() ? 0.0 : acc / static_cast<double>(bla.frf.size());
        rows.push_back(row);
    }
    return rows;
}

}  // namespace nlsid
