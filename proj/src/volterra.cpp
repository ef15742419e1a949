#include "nlsid/volterra.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "nlsid/error.hpp"
#include "nlsid/parallel.hpp"

namespace nlsid {

namespace {

double kernel_entry(KernelFamily family, const KernelHyper& h, int i, int j) {
    switch (family) {
        case KernelFamily::diagonal_decay:
            return i == j ? h.scale * std::pow(h.decay, i) : 0.0;
        case KernelFamily::tc:
            return h.scale * std::pow(h.decay, std::max(i, j));
        case KernelFamily::dc:
            return h.scale * std::pow(h.decay, std::max(i, j)) * std::pow(h.correlation, std::abs(i - j));
    }
    return 0.0;
}

void check_hyper(KernelFamily family, const KernelHyper& h) {
    if (!(h.scale > 0.0) || !(h.decay > 0.0)) throw ConfigError("volterra prior: scale and decay must be positive");
    if (family == KernelFamily::dc && !(h.correlation >= 0.0))
        throw ConfigError("volterra prior: correlation must be nonnegative");
}

void check_spd(const Eigen::MatrixXd& P, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * hi)) {
        std::ostringstream os;
        os << "volterra prior: " << what << " is not positive definite (smallest eigenvalue " << lo << ")";
        throw ConfigError(os.str());
    }
}

std::size_t pair_count(int m) { return static_cast<std::size_t>(m) * static_cast<std::size_t>(m + 1) / 2; }

Eigen::MatrixXd prior_blocks(const RegularizerSpec& reg, const KernelHyper& a, const KernelHyper& b, int m, int degree) {
    const Eigen::MatrixXd P1 = kernel_prior(reg.family, a, m);
    const auto n2 = degree >= 2 ? static_cast<Eigen::Index>(pair_count(m)) : 0;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(1 + m + n2, 1 + m + n2);
    P(0, 0) = reg.constant_variance;
    P.block(1, 1, m, m) = P1;
    if (n2 > 0) P.block(1 + m, 1 + m, n2, n2) = quadratic_prior(reg.family, b, m);
    return P;
}

struct Solve {
    Eigen::VectorXd theta;
    double log_ml = -std::numeric_limits<double>::infinity();
};

// theta = P (N I + G P)^-1 b; the profiled marginal likelihood of y ~ N(0, s2 (I + K P K^T / N)).
Solve ridge_solve(const Eigen::MatrixXd& G, const Eigen::VectorXd& b, double yy, double n, const Eigen::MatrixXd& P) {
    const Eigen::Index p = G.rows();
    Eigen::MatrixXd M = n * Eigen::MatrixXd::Identity(p, p) + G * P;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
    Solve s;
    s.theta = P * lu.solve(b);
    const double quad = yy - b.dot(s.theta);
    double logdet = 0.0;
    const Eigen::MatrixXd& LU = lu.matrixLU();
    for (Eigen::Index i = 0; i < p; ++i) logdet += std::log(std::abs(LU(i, i)) / n);
    if (quad > 0.0 && std::isfinite(logdet))
        s.log_ml = -0.5 * n * (std::log(2.0 * std::numbers::pi * quad / n) + 1.0) - 0.5 * logdet;
    return s;
}

std::vector<KernelHyper> hyper_grid(const RegularizerSpec& reg) {
    std::vector<double> corr{0.0};
    if (reg.family == KernelFamily::dc) corr = reg.correlation_grid;
    std::vector<KernelHyper> out;
    for (double c : reg.scale_grid)
        for (double l : reg.decay_grid)
            for (double r : corr) out.push_back({c, l, r});
    if (out.empty()) throw ConfigError("volterra: tuning grid is empty");
    return out;
}

}  // namespace

void VolterraModel::validate() const {
    if (m < 1) throw ConfigError("volterra: memory must be at least 1");
    if (degree < 1 || degree > 2) throw ConfigError("volterra: degree must be 1 or 2");
    if (h1.size() != m) throw ConfigError("volterra: h1 must have m entries");
    if (degree == 2) {
        if (h2.rows() != m || h2.cols() != m) throw ConfigError("volterra: h2 must be m x m");
        if ((h2 - h2.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, h2.cwiseAbs().maxCoeff()))
            throw ConfigError("volterra: h2 must be symmetric");
    }
}

std::size_t VolterraModel::num_parameters() const {
    return 1 + static_cast<std::size_t>(m) + (degree >= 2 ? pair_count(m) : 0);
}

Eigen::MatrixXd kernel_prior(KernelFamily family, const KernelHyper& h, int m) {
    if (m < 1) throw ConfigError("volterra prior: memory must be at least 1");
    check_hyper(family, h);
    Eigen::MatrixXd P(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) P(i, j) = kernel_entry(family, h, i, j);
    check_spd(P, "first-order prior");
    return P;
}

Eigen::MatrixXd quadratic_prior(KernelFamily family, const KernelHyper& h, int m) {
    const Eigen::MatrixXd k = kernel_prior(family, h, m) / h.scale;
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) pairs.emplace_back(i, j);
    const auto n = static_cast<Eigen::Index>(pairs.size());
    Eigen::MatrixXd P(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) {
            const auto [i1, j1] = pairs[static_cast<std::size_t>(a)];
            const auto [i2, j2] = pairs[static_cast<std::size_t>(b)];
            P(a, b) = h.scale * 0.5 * (k(i1, i2) * k(j1, j2) + k(i1, j2) * k(j1, i2));
        }
    check_spd(P, "second-order prior");
    return P;
}

Priors build_prior(const RegularizerSpec& reg, int m, int degree) {
    if (degree < 1 || degree > 2) throw ConfigError("volterra: degree must be 1 or 2");
    Priors p;
    p.P1 = kernel_prior(reg.family, reg.first, m);
    if (degree == 2) p.P2 = quadratic_prior(reg.family, reg.second, m);
    return p;
}

Eigen::MatrixXd volterra_regressors(std::span<const double> u, int m, int degree) {
    if (m < 1) throw ConfigError("volterra: memory must be at least 1");
    if (u.size() < static_cast<std::size_t>(m)) throw ConfigError("volterra: input shorter than the memory");
    const auto rows = static_cast<Eigen::Index>(u.size()) - m + 1;
    const auto cols = static_cast<Eigen::Index>(1 + m + (degree >= 2 ? pair_count(m) : 0));
    Eigen::MatrixXd K(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t t = static_cast<std::size_t>(r) + static_cast<std::size_t>(m) - 1;
        K(r, 0) = 1.0;
        for (int i = 0; i < m; ++i) K(r, 1 + i) = u[t - static_cast<std::size_t>(i)];
        if (degree < 2) continue;
        Eigen::Index c = 1 + m;
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j)
                K(r, c++) = (i == j ? 1.0 : 2.0) * u[t - static_cast<std::size_t>(i)] * u[t - static_cast<std::size_t>(j)];
    }
    return K;
}

Eigen::VectorXd volterra_parameters(const VolterraModel& mdl) {
    mdl.validate();
    Eigen::VectorXd th(static_cast<Eigen::Index>(mdl.num_parameters()));
    th(0) = mdl.h0;
    th.segment(1, mdl.m) = mdl.h1;
    if (mdl.degree == 2) {
        Eigen::Index c = 1 + mdl.m;
        for (int i = 0; i < mdl.m; ++i)
            for (int j = i; j < mdl.m; ++j) th(c++) = mdl.h2(i, j);
    }
    return th;
}

VolterraModel fit_volterra(const SignalRecord& rec, int m, int degree, const RegularizerSpec& reg) {
    rec.validate();
    if (degree < 1 || degree > 2) throw ConfigError("volterra: degree must be 1 or 2");
    if (!(reg.constant_variance > 0.0)) throw ConfigError("volterra: constant_variance must be positive");
    const Eigen::MatrixXd K = volterra_regressors(rec.input, m, degree);
    const Eigen::Map<const Eigen::VectorXd> yall(rec.output.data(), static_cast<Eigen::Index>(rec.output.size()));
    const Eigen::VectorXd y = yall.tail(K.rows());
    const Eigen::MatrixXd G = K.transpose() * K;
    const Eigen::VectorXd b = K.transpose() * y;
    const double n = static_cast<double>(K.rows()), yy = y.squaredNorm();

    VolterraModel mdl;
    mdl.m = m;
    mdl.degree = degree;
    mdl.family = reg.family;
    mdl.first = reg.first;
    mdl.second = reg.second;

    Solve best;
    if (reg.tuning == Tuning::fixed) {
        best = ridge_solve(G, b, yy, n, prior_blocks(reg, reg.first, reg.second, m, degree));
    } else {
        const auto g1 = hyper_grid(reg);
        const auto g2 = degree == 2 ? g1 : std::vector<KernelHyper>{reg.second};
        std::vector<Solve> sols(g1.size() * g2.size());
        parallel_for(sols.size(), [&](std::size_t idx) {
            try {
                sols[idx] = ridge_solve(G, b, yy, n, prior_blocks(reg, g1[idx / g2.size()], g2[idx % g2.size()], m, degree));
            } catch (const ConfigError&) {
                // non-SPD candidate; stays at -inf
            }
        });
        std::size_t arg = sols.size();
        for (std::size_t i = 0; i < sols.size(); ++i)
            if (sols[i].theta.size() > 0 && (arg == sols.size() || sols[i].log_ml > sols[arg].log_ml)) arg = i;
        if (arg == sols.size()) throw NumericError("volterra: no admissible hyperparameter candidate");
        best = sols[arg];
        mdl.first = g1[arg / g2.size()];
        mdl.second = g2[arg % g2.size()];
    }
    if (!best.theta.allFinite()) throw NumericError("volterra: regularized solve failed");

    mdl.log_marginal_likelihood = best.log_ml;
    mdl.h0 = best.theta(0);
    mdl.h1 = best.theta.segment(1, m);
    mdl.h2 = Eigen::MatrixXd::Zero(m, m);
    if (degree == 2) {
        Eigen::Index c = 1 + m;
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) {
                mdl.h2(i, j) = best.theta(c);
                mdl.h2(j, i) = best.theta(c);
                ++c;
            }
    }
    if (n < 5.0 * static_cast<double>(mdl.num_parameters()))
        mdl.warnings.push_back("record shorter than 5x the parameter count; estimates rely on the prior");
    return mdl;
}

Trajectory eval_volterra(const VolterraModel& mdl, std::span<const double> u) {
    mdl.validate();
    if (u.size() < static_cast<std::size_t>(mdl.m)) throw ConfigError("volterra: input shorter than the memory");
    Trajectory out;
    out.first_valid = static_cast<std::size_t>(mdl.m) - 1;
    out.values.assign(u.size(), std::numeric_limits<double>::quiet_NaN());
    Eigen::VectorXd lag(mdl.m);
    for (std::size_t t = out.first_valid; t < u.size(); ++t) {
        for (int i = 0; i < mdl.m; ++i) lag(i) = u[t - static_cast<std::size_t>(i)];
        double v = mdl.h0 + mdl.h1.dot(lag);
        if (mdl.degree == 2) v += lag.dot(mdl.h2 * lag);
        out.values[t] = v;
    }
    return out;
}

const char* to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::diagonal_decay: return "diagonal_decay";
        case KernelFamily::tc: return "tc";
        case KernelFamily::dc: return "dc";
    }
    return "dc";
}

KernelFamily kernel_family_from_string(const std::string& name) {
    if (name == "diagonal_decay") return KernelFamily::diagonal_decay;
    if (name == "tc") return KernelFamily::tc;
    if (name == "dc") return KernelFamily::dc;
    throw ConfigError("unknown kernel family '" + name + "'");
}

const char* to_string(Tuning t) { return t == Tuning::fixed ? "fixed" : "marginal_likelihood_grid"; }

Tuning tuning_from_string(const std::string& name) {
    if (name == "fixed") return Tuning::fixed;
    if (name == "marginal_likelihood_grid") return Tuning::marginal_likelihood_grid;
    throw ConfigError("unknown tuning '" + name + "'");
}

}  // namespace nlsid
