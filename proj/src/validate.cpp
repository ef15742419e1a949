#include "nlsid/validate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "nlsid/error.hpp"
#include "nlsid/parallel.hpp"

namespace nlsid {

namespace {

CorrelationTest correlation_test(std::span<const double> a, std::span<const double> b, int max_lag, double scale) {
    CorrelationTest t;
    const std::size_t n = a.size();
    t.bound = 1.96 / std::sqrt(static_cast<double>(n));
    t.allowed = binomial_quantile(max_lag, 0.05, 0.95);
    const double ma = mean(a), mb = mean(b);
    for (int lag = 1; lag <= max_lag; ++lag) {
        double s = 0.0;
        for (std::size_t i = static_cast<std::size_t>(lag); i < n; ++i)
            s += (a[i] - ma) * (b[i - static_cast<std::size_t>(lag)] - mb);
        const double r = scale > 0.0 ? s / scale : 0.0;
        t.values.push_back(r);
        if (std::abs(r) > t.bound) ++t.exceedances;
    }
    t.pass = t.exceedances <= t.allowed;
    return t;
}

double centered_norm(std::span<const double> x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s);
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double fit_metric(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw ConfigError("fit metric: y and yhat differ in length");
    if (y.size() < 2) throw ConfigError("fit metric: at least two samples are required");
    const double den = centered_norm(y);
    if (!(den > 0.0)) throw ConfigError("fit metric: constant output, the metric is undefined");
    double num = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) num += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return 100.0 * (1.0 - std::sqrt(num) / den);
}

int binomial_quantile(int n, double p, double q) {
    if (n < 0 || !(p >= 0.0 && p <= 1.0)) throw ConfigError("binomial quantile: bad arguments");
    double cdf = 0.0;
    for (int k = 0; k <= n; ++k) {
        cdf += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                        k * std::log(p) + (n - k) * std::log1p(-p));
        if (cdf >= q) return k;
    }
    return n;
}

ResidualTests residual_tests(std::span<const double> residual, std::span<const double> input, int max_lag) {
    if (max_lag < 1) throw ConfigError("residual tests: max_lag must be at least 1");
    if (residual.size() != input.size()) throw ConfigError("residual tests: residual and input differ in length");
    if (residual.size() <= 10 * static_cast<std::size_t>(max_lag))
        throw ConfigError("residual tests: record must be longer than 10 x max_lag");
    ResidualTests out;
    const double er = centered_norm(residual), eu = centered_norm(input);
    out.autocorr = correlation_test(residual, residual, max_lag, er * er);
    out.crosscorr = correlation_test(residual, input, max_lag, er * eu);
    if (!(er > 0.0)) out.notes.push_back("zero-variance residual: correlations undefined, tests pass trivially");
    if (!(eu > 0.0)) out.notes.push_back("zero-variance input: cross-correlation undefined, test passes trivially");
    return out;
}

CoverageReport domain_coverage(const Eigen::MatrixXd& train, const Eigen::MatrixXd& test, double radius_quantile) {
    if (train.cols() != test.cols()) throw ConfigError("domain coverage: train and test dimensions differ");
    if (train.rows() < train.cols() + 1) throw ConfigError("domain coverage: need at least dim + 1 training rows");
    if (test.rows() == 0) throw ConfigError("domain coverage: no test states");
    if (!(radius_quantile > 0.0 && radius_quantile <= 1.0))
        throw ConfigError("domain coverage: radius quantile must lie in (0, 1]");
    CoverageReport rep;
    const Eigen::RowVectorXd mu = train.colwise().mean();
    const Eigen::MatrixXd centered = train.rowwise() - mu;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(train.rows() - 1);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    const Eigen::Index n = cov.rows();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(ldlt.vectorD().maxCoeff(), 0.0)) {
        cov += (1e-8 * cov.trace() / static_cast<double>(n) + 1e-300) * Eigen::MatrixXd::Identity(n, n);
        ldlt.compute(cov);
        rep.regularized = true;
    }
    auto dist = [&](const Eigen::MatrixXd& pts) {
        const Eigen::MatrixXd c = (pts.rowwise() - mu).transpose();
        const Eigen::MatrixXd s = ldlt.solve(c);
        std::vector<double> d(static_cast<std::size_t>(pts.rows()));
        for (Eigen::Index k = 0; k < pts.rows(); ++k) d[static_cast<std::size_t>(k)] = c.col(k).dot(s.col(k));
        return d;
    };
    rep.radius = quantile(dist(train), radius_quantile);
    rep.test_distances = dist(test);
    const double limit = rep.radius * (1.0 + 1e-9);
    const auto inside = std::count_if(rep.test_distances.begin(), rep.test_distances.end(),
                                      [&](double d) { return d <= limit; });
    rep.fraction_inside = static_cast<double>(inside) / static_cast<double>(test.rows());
    rep.extrapolation_flag = 1.0 - rep.fraction_inside > 0.10;
    return rep;
}

ValidationReport validate_model(std::span<const double> y, std::span<const double> yhat, std::span<const double> input,
                                int max_lag, const Eigen::MatrixXd* train_states, const Eigen::MatrixXd* test_states) {
    ValidationReport rep;
    rep.fit_percent = fit_metric(y, yhat);
    std::vector<double> e(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) e[i] = y[i] - yhat[i];
    rep.rms_error = rms(e);
    rep.tests = residual_tests(e, input, max_lag);
    if (train_states && test_states) rep.coverage = domain_coverage(*train_states, *test_states);
    return rep;
}

VariabilityReport realization_variability(const VariabilityFit& fit, const ExcitationFactory& factory, int M,
                                          std::uint64_t seed) {
    if (M < 5) throw ConfigError("realization variability: M must be at least 5");
    std::vector<std::optional<FitOutcome>> outcomes(static_cast<std::size_t>(M));
    parallel_for(outcomes.size(), [&](std::size_t i) {
        try {
            outcomes[i] = fit(factory(seed + i));
        } catch (const std::exception&) {
            // recorded as a failure below
        }
    });
    VariabilityReport rep;
    std::vector<const FitOutcome*> ok;
    for (const auto& o : outcomes) {
        if (o) ok.push_back(&*o);
        else ++rep.failures;
    }
    if (ok.size() < 5) throw NumericError("realization variability: fewer than 5 fits succeeded");
    const std::size_t L = ok.front()->functional.size();
    for (const auto* o : ok)
        if (o->functional.size() != L || o->theory_std.size() != L)
            throw NumericError("realization variability: functional length differs between fits");
    const double n = static_cast<double>(ok.size());
    rep.empirical_std.assign(L, 0.0);
    rep.theory_std.assign(L, 0.0);
    rep.ratio.assign(L, 0.0);
    for (const auto* o : ok) rep.realizations.push_back(o->functional);
    for (std::size_t l = 0; l < L; ++l) {
        double m = 0.0, t = 0.0;
        for (const auto* o : ok) {
            m += o->functional[l];
            t += o->theory_std[l];
        }
        m /= n;
        double v = 0.0;
        for (const auto* o : ok) v += (o->functional[l] - m) * (o->functional[l] - m);
        rep.empirical_std[l] = std::sqrt(v / (n - 1.0));
        rep.theory_std[l] = t / n;
        rep.ratio[l] = rep.theory_std[l] > 0.0 ? rep.empirical_std[l] / rep.theory_std[l]
                                               : std::numeric_limits<double>::infinity();
    }
    if (L > 0) {
        std::vector<double> r = rep.ratio;
        std::nth_element(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(L / 2), r.end());
        rep.median_ratio = r[L / 2];
        if (L % 2 == 0) {
            const double lower = *std::max_element(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(L / 2));
            rep.median_ratio = 0.5 * (rep.median_ratio + lower);
        }
    }
    rep.structural_error_flag = rep.median_ratio > 1.5;
    if (ok.size() < 20)
        rep.warnings.push_back("fewer than 20 realizations: the std ratio has a wide confidence interval");
    if (rep.failures > 0) rep.warnings.push_back(std::to_string(rep.failures) + " realization fit(s) failed");
    return rep;
}

}  // namespace nlsid
