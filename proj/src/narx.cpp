#include "nlsid/narx.hpp"

#include <cmath>
#include <limits>

#include "nlsid/error.hpp"

namespace nlsid {

namespace {

constexpr double kDivergence = 1e6;

// Regressor vector at time t; lagged values before index 0 read as zero.
void fill_regressors(const NarxModel& m, std::span<const double> y, std::span<const double> u, std::size_t t,
                     Eigen::VectorXd& phi) {
    auto at = [](std::span<const double> s, std::size_t t0, int lag) {
        const auto idx = static_cast<long long>(t0) - lag;
        return idx < 0 ? 0.0 : s[static_cast<std::size_t>(idx)];
    };
    Eigen::Index r = 0;
    for (int i = 1; i <= m.na; ++i) phi(r++) = at(y, t, i);
    for (int i = m.direct_term ? 0 : 1; i <= m.nb; ++i) phi(r++) = at(u, t, i);
}

}  // namespace

std::vector<std::string> narx_regressor_layout(int na, int nb, bool direct_term) {
    std::vector<std::string> out;
    for (int i = 1; i <= na; ++i) out.push_back("y(t-" + std::to_string(i) + ")");
    for (int i = direct_term ? 0 : 1; i <= nb; ++i) out.push_back(i == 0 ? "u(t)" : "u(t-" + std::to_string(i) + ")");
    return out;
}

NarxModel fit_narx(const SignalRecord& rec, const NarxOptions& opt) {
    if (rec.size() == 0) throw ConfigError("NARX: empty record");
    rec.validate();
    if (opt.degree < 1) throw ConfigError("NARX: polynomial degree must be at least 1");
    if (opt.na < 0 || opt.nb < 0) throw ConfigError("NARX: lags must be nonnegative");

    NarxModel m;
    m.na = opt.na;
    m.nb = opt.nb;
    m.direct_term = opt.direct_term;
    m.regressor_layout = narx_regressor_layout(opt.na, opt.nb, opt.direct_term);
    const int nvars = static_cast<int>(m.num_regressors());
    if (nvars == 0) throw ConfigError("NARX: model has no regressors");
    MonomialBasis basis(nvars, opt.include_constant ? 0 : 1, opt.degree);

    const std::size_t start = m.max_lag();
    if (rec.size() <= start) throw ConfigError("NARX: record shorter than the maximum lag");
    const std::size_t rows = rec.size() - start;
    if (static_cast<double>(rows) < 10.0 * static_cast<double>(basis.size()))
        m.warnings.push_back("record has fewer than 10 samples per parameter");

    Eigen::MatrixXd k(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(basis.size()));
    Eigen::VectorXd target(static_cast<Eigen::Index>(rows));
    Eigen::VectorXd phi(nvars);
    for (std::size_t t = start; t < rec.size(); ++t) {
        fill_regressors(m, rec.output, rec.input, t, phi);
        k.row(static_cast<Eigen::Index>(t - start)) = basis.evaluate(phi).transpose();
        target(static_cast<Eigen::Index>(t - start)) = rec.output[t];
    }
    const auto ls = solve_least_squares(k, target);
    if (ls.rank_deficient)
        m.warnings.push_back("regression matrix is rank deficient (rank " + std::to_string(ls.rank) + " of " +
                             std::to_string(basis.size()) + "); minimum-norm solution used");
    m.map = PolyMap(basis, ls.coefficients.transpose());
    m.training_rms = std::sqrt((target - k * ls.coefficients).squaredNorm() / static_cast<double>(rows));
    return m;
}

double narx_equation_cost(const NarxModel& m, const SignalRecord& rec) {
    const auto pred = predict_one_step(m, rec);
    double s = 0.0;
    for (std::size_t t = pred.first_valid; t < rec.size(); ++t) {
        const double e = rec.output[t] - pred.values[t];
        s += e * e;
    }
    const std::size_t n = rec.size() - pred.first_valid;
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

Trajectory predict_one_step(const NarxModel& m, const SignalRecord& rec) {
    if (rec.input.size() != rec.output.size()) throw ConfigError("NARX: input/output length mismatch");
    Trajectory tr;
    tr.first_valid = std::min(m.max_lag(), rec.size());
    tr.values.assign(rec.size(), std::numeric_limits<double>::quiet_NaN());
    Eigen::VectorXd phi(static_cast<Eigen::Index>(m.num_regressors()));
    for (std::size_t t = tr.first_valid; t < rec.size(); ++t) {
        fill_regressors(m, rec.output, rec.input, t, phi);
        tr.values[t] = eval_polymap(m.map, phi)(0);
    }
    return tr;
}

FreeRunResult simulate_free_run(const NarxModel& m, std::span<const double> u, std::span<const double> y_init) {
    if (y_init.size() != static_cast<std::size_t>(m.na))
        throw ConfigError("NARX free run: y_init must hold exactly na = " + std::to_string(m.na) + " values");
    FreeRunResult res;
    res.output.assign(u.size(), 0.0);
    const std::size_t init = std::min(y_init.size(), u.size());
    for (std::size_t t = 0; t < init; ++t) res.output[t] = y_init[t];
    Eigen::VectorXd phi(static_cast<Eigen::Index>(m.num_regressors()));
    for (std::size_t t = init; t < u.size(); ++t) {
        fill_regressors(m, res.output, u, t, phi);
        const double y = eval_polymap(m.map, phi)(0);
        if (!std::isfinite(y) || std::abs(y) > kDivergence) {
            res.status = SimStatus::diverged;
            res.divergence_index = t;
            res.output.resize(t);
            return res;
        }
        res.output[t] = y;
    }
    return res;
}

}  // namespace nlsid
