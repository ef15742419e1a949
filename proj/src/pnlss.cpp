#include "nlsid/pnlss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "lm.hpp"
#include "nlsid/error.hpp"

namespace nlsid {

namespace {

constexpr double kDivergence = 1e6;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Parameter layout: A (row-major), B, C, D, E (row-major), F, x0. With a decoupled state map the
// E block holds W (column-major), V (column-major) and the branch coefficients instead.
struct Layout {
    Eigen::Index n = 0, mE = 0, mF = 0;
    Eigen::Index r = 0, branch_coeffs = 0;  // decoupled state map only
    Eigen::Index a() const { return 0; }
    Eigen::Index b() const { return n * n; }
    Eigen::Index c() const { return b() + n; }
    Eigen::Index d() const { return c() + n; }
    Eigen::Index e() const { return d() + 1; }
    Eigen::Index w() const { return e(); }
    Eigen::Index v() const { return w() + n * r; }
    Eigen::Index g() const { return v() + (n + 1) * r; }
    Eigen::Index f() const { return e() + n * mE + (2 * n + 1) * r + branch_coeffs; }
    Eigen::Index x0() const { return f() + mF; }
    Eigen::Index total() const { return x0() + n; }
};

Layout layout_of(const PnlssModel& m) {
    Layout l;
    l.n = m.state_dim();
    l.mF = m.F.empty() ? 0 : static_cast<Eigen::Index>(m.F.basis.size());
    if (m.state_decoupled) {
        l.r = m.state_decoupled->rank();
        for (const auto& br : m.state_decoupled->branches) l.branch_coeffs += static_cast<Eigen::Index>(br.size());
    } else {
        l.mE = m.E.empty() ? 0 : static_cast<Eigen::Index>(m.E.basis.size());
    }
    return l;
}

PolyMap zero_map(int outputs, int vars, int degree) {
    if (degree < 2) return {};
    return PolyMap::zeros(outputs, MonomialBasis(vars, 2, degree));
}

std::vector<double> poly_from_roots(const Eigen::VectorXcd& roots) {
    // Coefficients of prod (1 - r z^-1) in powers of z^-1.
    std::vector<Complex> c{1.0};
    for (Eigen::Index i = 0; i < roots.size(); ++i) {
        std::vector<Complex> next(c.size() + 1, 0.0);
        for (std::size_t j = 0; j < c.size(); ++j) {
            next[j] += c[j];
            next[j + 1] -= roots(i) * c[j];
        }
        c = std::move(next);
    }
    std::vector<double> out(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) out[j] = c[j].real();
    return out;
}

Eigen::VectorXcd roots_of(const std::vector<double>& coeffs) {
    // Roots in z of coeffs[0] z^n + coeffs[1] z^(n-1) + ... + coeffs[n].
    std::size_t lead = 0;
    while (lead < coeffs.size() && coeffs[lead] == 0.0) ++lead;
    if (coeffs.size() - lead < 2) return {};
    const auto n = static_cast<Eigen::Index>(coeffs.size() - lead - 1);
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) comp(0, j) = -coeffs[lead + static_cast<std::size_t>(j) + 1] / coeffs[lead];
    for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    return comp.eigenvalues();
}

Complex eval_z(const std::vector<double>& c, Complex zinv) {
    Complex acc = 0.0, p = 1.0;
    for (double v : c) {
        acc += v * p;
        p *= zinv;
    }
    return acc;
}

// Discrete Lyapunov A X A^T - X + Q = 0 via the Kronecker system.
std::optional<Eigen::MatrixXd> dlyap(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q) {
    const Eigen::Index n = A.rows();
    Eigen::MatrixXd K = Eigen::MatrixXd::Identity(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index k = 0; k < n; ++k)
                for (Eigen::Index l = 0; l < n; ++l) K(i * n + j, k * n + l) -= A(i, k) * A(j, l);
    Eigen::VectorXd q(n * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) q(i * n + j) = Q(i, j);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) return std::nullopt;
    const Eigen::VectorXd x = lu.solve(q);
    Eigen::MatrixXd X(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) X(i, j) = x(i * n + j);
    return 0.5 * (X + X.transpose());
}

bool balance(PnlssModel& m) {
    const auto wc = dlyap(m.A, m.B * m.B.transpose());
    const auto wo = dlyap(m.A.transpose(), m.C.transpose() * m.C);
    if (!wc || !wo) return false;
    Eigen::LLT<Eigen::MatrixXd> llt(*wc);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::MatrixXd lc = llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lc.transpose() * (*wo) * lc);
    const Eigen::VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() <= 1e-14 * ev.maxCoeff()) return false;
    const Eigen::VectorXd hsv = ev.cwiseSqrt();
    const Eigen::MatrixXd t = lc * es.eigenvectors() * hsv.cwiseSqrt().cwiseInverse().asDiagonal();
    const Eigen::MatrixXd tinv = t.inverse();
    m.A = tinv * m.A * t;
    m.B = tinv * m.B;
    m.C = m.C * t;
    return true;
}

double record_rms_error(const PnlssModel& m, const SignalRecord& rec) {
    const auto sim = simulate_pnlss(m, rec.input);
    if (sim.status == SimStatus::diverged) return kInf;
    const std::size_t start = rec.num_periods > 1 ? rec.period_samples : 0;
    double s = 0.0;
    for (std::size_t t = start; t < rec.size(); ++t) {
        const double e = rec.output[t] - sim.output[t];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(rec.size() - start));
}

}  // namespace

bool PnlssModel::is_linear() const {
    const bool e0 = E.empty() || E.coefficients.isZero(0.0);
    const bool f0 = F.empty() || F.coefficients.isZero(0.0);
    return e0 && f0 && !state_decoupled;
}

void PnlssModel::validate() const {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || B.size() != n || C.size() != n || x0.size() != n)
        throw ConfigError("PNLSS: inconsistent matrix dimensions");
    if (!E.empty() && (E.num_outputs() != n || E.num_vars() != n + 1))
        throw ConfigError("PNLSS: state map E must map n+1 variables to n outputs");
    if (!F.empty() && (F.num_outputs() != 1 || F.num_vars() != n + 1))
        throw ConfigError("PNLSS: output map F must map n+1 variables to 1 output");
    if (state_decoupled) {
        state_decoupled->validate();
        if (state_decoupled->num_inputs() != n + 1 || state_decoupled->num_outputs() != n)
            throw ConfigError("PNLSS: decoupled state map has wrong dimensions");
    }
}

PnlssModel PnlssModel::linear(Eigen::MatrixXd A, Eigen::VectorXd B, Eigen::RowVectorXd C, double D,
                              int state_degree, int output_degree) {
    PnlssModel m;
    m.A = std::move(A);
    m.B = std::move(B);
    m.C = std::move(C);
    m.D = D;
    m.x0 = Eigen::VectorXd::Zero(m.A.rows());
    m.set_nonlinear_degrees(state_degree, output_degree);
    m.validate();
    return m;
}

void PnlssModel::set_nonlinear_degrees(int state_degree, int output_degree) {
    const int n = state_dim();
    E = zero_map(n, n + 1, state_degree);
    F = zero_map(1, n + 1, output_degree);
    state_decoupled.reset();
}

PnlssSimulation simulate_pnlss(const PnlssModel& m, std::span<const double> u) {
    m.validate();
    const Eigen::Index n = m.state_dim();
    PnlssSimulation sim;
    sim.output.assign(u.size(), 0.0);
    sim.states.resize(static_cast<Eigen::Index>(u.size()), n);
    Eigen::VectorXd x = m.x0;
    Eigen::VectorXd z(n + 1);
    for (std::size_t t = 0; t < u.size(); ++t) {
        z.head(n) = x;
        z(n) = u[t];
        double y = m.C.dot(x) + m.D * u[t];
        if (!m.F.empty()) y += eval_polymap(m.F, z)(0);
        if (!std::isfinite(y) || std::abs(y) > kDivergence || !x.allFinite()) {
            sim.status = SimStatus::diverged;
            sim.divergence_index = t;
            sim.output.resize(t);
            sim.states.conservativeResize(static_cast<Eigen::Index>(t), n);
            return sim;
        }
        sim.output[t] = y;
        sim.states.row(static_cast<Eigen::Index>(t)) = x.transpose();
        Eigen::VectorXd next = m.A * x + m.B * u[t];
        if (m.state_decoupled) next += eval_decoupled(*m.state_decoupled, z);
        else if (!m.E.empty()) next += eval_polymap(m.E, z);
        x = next;
    }
    return sim;
}

Complex linear_frf(const PnlssModel& m, double omega) {
    const Eigen::Index n = m.state_dim();
    const Eigen::MatrixXcd zi = std::polar(1.0, omega) * Eigen::MatrixXcd::Identity(n, n) - m.A.cast<Complex>();
    const Eigen::VectorXcd v = zi.partialPivLu().solve(m.B.cast<Complex>());
    return (m.C.cast<Complex>() * v)(0) + m.D;
}

LinearInit init_linear_from_bla(const BlaModel& bla, int n, int sk_iterations) {
    if (n < 1) throw ConfigError("PNLSS init: state dimension must be positive");
    const std::size_t lines = bla.lines.size();
    if (lines < 2 * static_cast<std::size_t>(n))
        throw ConfigError("PNLSS init: need at least 2n excited lines (have " + std::to_string(lines) + ")");

    LinearInit out;
    std::vector<Complex> zinv(lines);
    std::vector<double> w(lines, 1.0);
    bool weighted = !bla.frf_variance_total.empty();
    for (double v : bla.frf_variance_total) weighted = weighted && v > 0.0;
    for (std::size_t k = 0; k < lines; ++k) {
        zinv[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(bla.lines[k]) /
                                      static_cast<double>(bla.period_samples));
        if (weighted) w[k] = 1.0 / std::sqrt(bla.frf_variance_total[k]);
    }

    // Unknowns: a1..an, b0..bn.
    const Eigen::Index nu = 2 * n + 1;
    std::vector<double> den(static_cast<std::size_t>(n) + 1, 0.0), num(static_cast<std::size_t>(n) + 1, 0.0);
    den[0] = 1.0;
    for (int it = 0; it < std::max(1, sk_iterations); ++it) {
        Eigen::MatrixXd K(2 * static_cast<Eigen::Index>(lines), nu);
        Eigen::VectorXd rhs(2 * static_cast<Eigen::Index>(lines));
        for (std::size_t k = 0; k < lines; ++k) {
            const double sk = w[k] / std::abs(eval_z(den, zinv[k]));
            const Complex g = bla.frf[k];
            Complex p = 1.0;
            std::vector<Complex> row(static_cast<std::size_t>(nu));
            row[static_cast<std::size_t>(n)] = -1.0;  // b0
            for (int i = 1; i <= n; ++i) {
                p *= zinv[k];
                row[static_cast<std::size_t>(i - 1)] = g * p;
                row[static_cast<std::size_t>(n + i)] = -p;
            }
            const auto r = static_cast<Eigen::Index>(2 * k);
            for (Eigen::Index j = 0; j < nu; ++j) {
                K(r, j) = sk * row[static_cast<std::size_t>(j)].real();
                K(r + 1, j) = sk * row[static_cast<std::size_t>(j)].imag();
            }
            rhs(r) = -sk * g.real();
            rhs(r + 1) = -sk * g.imag();
        }
        const auto ls = solve_least_squares(K, rhs);
        std::vector<double> new_den(den.size()), new_num(num.size());
        new_den[0] = 1.0;
        for (int i = 1; i <= n; ++i) new_den[static_cast<std::size_t>(i)] = ls.coefficients(i - 1);
        for (int i = 0; i <= n; ++i) new_num[static_cast<std::size_t>(i)] = ls.coefficients(n + i);
        double change = 0.0;
        for (std::size_t i = 0; i < den.size(); ++i) change = std::max(change, std::abs(new_den[i] - den[i]));
        den = new_den;
        num = new_num;
        if (it > 0 && change < 1e-13) break;
    }

    // Reflect unstable poles and refit the numerator with the denominator fixed.
    Eigen::VectorXcd poles = roots_of(den);
    bool reflected = false;
    for (Eigen::Index i = 0; i < poles.size(); ++i)
        if (std::abs(poles(i)) >= 1.0) {
            poles(i) = 1.0 / std::conj(poles(i));
            reflected = true;
        }
    if (reflected) {
        out.warnings.push_back("unstable poles of the initial linear model were reflected inside the unit circle");
        den = poly_from_roots(poles);
        Eigen::MatrixXd K(2 * static_cast<Eigen::Index>(lines), n + 1);
        Eigen::VectorXd rhs(2 * static_cast<Eigen::Index>(lines));
        for (std::size_t k = 0; k < lines; ++k) {
            const Complex target = bla.frf[k] * eval_z(den, zinv[k]);
            Complex p = 1.0;
            const auto r = static_cast<Eigen::Index>(2 * k);
            for (int i = 0; i <= n; ++i) {
                K(r, i) = w[k] * p.real();
                K(r + 1, i) = w[k] * p.imag();
                p *= zinv[k];
            }
            rhs(r) = w[k] * target.real();
            rhs(r + 1) = w[k] * target.imag();
        }
        const auto ls = solve_least_squares(K, rhs);
        for (int i = 0; i <= n; ++i) num[static_cast<std::size_t>(i)] = ls.coefficients(i);
    }

    // Controllable canonical form, then balanced when the realization is minimal.
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd B = Eigen::VectorXd::Zero(n);
    Eigen::RowVectorXd C(n);
    for (int i = 0; i < n; ++i) {
        A(0, i) = -den[static_cast<std::size_t>(i) + 1];
        C(i) = num[static_cast<std::size_t>(i) + 1] - num[0] * den[static_cast<std::size_t>(i) + 1];
    }
    for (int i = 1; i < n; ++i) A(i, i - 1) = 1.0;
    B(0) = 1.0;
    out.model = PnlssModel::linear(A, B, C, num[0]);
    if (!balance(out.model)) out.warnings.push_back("realization is not minimal; balancing skipped");
    out.numerator = num;
    out.denominator = den;

    double err = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < lines; ++k) {
        const Complex g = eval_z(num, zinv[k]) / eval_z(den, zinv[k]);
        err += std::norm(g - bla.frf[k]);
        ref += std::norm(bla.frf[k]);
    }
    out.frf_relative_error = ref > 0.0 ? std::sqrt(err / ref) : std::sqrt(err);
    return out;
}

LinearInit init_linear_from_bla(const BlaModel& bla, int n, const SignalRecord& rec, int sk_iterations) {
    rec.validate();
    auto out = init_linear_from_bla(bla, n, sk_iterations);
    out.linear_simulation_rms = record_rms_error(out.model, rec);
    return out;
}

Eigen::VectorXd pnlss_parameters(const PnlssModel& m) {
    const Layout l = layout_of(m);
    Eigen::VectorXd th(l.total());
    for (Eigen::Index i = 0; i < l.n; ++i)
        for (Eigen::Index j = 0; j < l.n; ++j) th(l.a() + i * l.n + j) = m.A(i, j);
    th.segment(l.b(), l.n) = m.B;
    th.segment(l.c(), l.n) = m.C.transpose();
    th(l.d()) = m.D;
    for (Eigen::Index i = 0; i < l.n; ++i)
        for (Eigen::Index j = 0; j < l.mE; ++j) th(l.e() + i * l.mE + j) = m.E.coefficients(i, j);
    if (m.state_decoupled) {
        const auto& dec = *m.state_decoupled;
        th.segment(l.w(), l.n * l.r) = dec.W.reshaped();
        th.segment(l.v(), (l.n + 1) * l.r) = dec.V.reshaped();
        Eigen::Index k = l.g();
        for (const auto& br : dec.branches)
            for (double c : br) th(k++) = c;
    }
    for (Eigen::Index j = 0; j < l.mF; ++j) th(l.f() + j) = m.F.coefficients(0, j);
    th.segment(l.x0(), l.n) = m.x0;
    return th;
}

PnlssModel pnlss_with_parameters(const PnlssModel& m, const Eigen::Ref<const Eigen::VectorXd>& th) {
    const Layout l = layout_of(m);
    if (th.size() != l.total()) throw ConfigError("PNLSS: parameter vector has wrong length");
    PnlssModel out = m;
    for (Eigen::Index i = 0; i < l.n; ++i)
        for (Eigen::Index j = 0; j < l.n; ++j) out.A(i, j) = th(l.a() + i * l.n + j);
    out.B = th.segment(l.b(), l.n);
    out.C = th.segment(l.c(), l.n).transpose();
    out.D = th(l.d());
    for (Eigen::Index i = 0; i < l.n; ++i)
        for (Eigen::Index j = 0; j < l.mE; ++j) out.E.coefficients(i, j) = th(l.e() + i * l.mE + j);
    if (out.state_decoupled) {
        auto& dec = *out.state_decoupled;
        dec.W.reshaped() = th.segment(l.w(), l.n * l.r);
        dec.V.reshaped() = th.segment(l.v(), (l.n + 1) * l.r);
        Eigen::Index k = l.g();
        for (auto& br : dec.branches)
            for (double& c : br) c = th(k++);
    }
    for (Eigen::Index j = 0; j < l.mF; ++j) out.F.coefficients(0, j) = th(l.f() + j);
    out.x0 = th.segment(l.x0(), l.n);
    return out;
}

PnlssResidual pnlss_residual(const PnlssModel& m, const SignalRecord& rec, const PnlssFitOptions& opt,
                             bool with_jacobian) {
    m.validate();
    const Layout l = layout_of(m);
    const auto T = static_cast<Eigen::Index>(rec.size());
    const Eigen::Index n = l.n, np = l.total();
    const std::span<const double> u(rec.input);

    PnlssResidual res;
    Eigen::VectorXd yhat(T);
    Eigen::MatrixXd jt;
    if (with_jacobian) jt.resize(T, np);

    Eigen::VectorXd x = m.x0;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, np);
    S.middleCols(l.x0(), n).setIdentity();
    Eigen::VectorXd z(n + 1), zetaE, zetaF;
    Eigen::MatrixXd dzE, dzF;
    const DecoupledFunction* dec = m.state_decoupled ? &*m.state_decoupled : nullptr;
    Eigen::VectorXd s_dec(l.r), g_dec(l.r), gp_dec(l.r);
    for (Eigen::Index t = 0; t < T; ++t) {
        const double ut = u[static_cast<std::size_t>(t)];
        z.head(n) = x;
        z(n) = ut;
        double y = m.C.dot(x) + m.D * ut;
        if (l.mF > 0) {
            zetaF = m.F.basis.evaluate(z);
            y += m.F.coefficients.row(0).dot(zetaF);
        }
        if (!std::isfinite(y) || std::abs(y) > kDivergence) {
            res.cost = kInf;
            return res;
        }
        yhat(t) = y;
        if (l.mE > 0) zetaE = m.E.basis.evaluate(z);
        if (l.r > 0) {
            s_dec = dec->V.transpose() * z;
            for (Eigen::Index b = 0; b < l.r; ++b) {
                const auto& br = dec->branches[static_cast<std::size_t>(b)];
                g_dec(b) = 0.0;
                gp_dec(b) = 0.0;
                double pw = 1.0;
                for (std::size_t d = 0; d < br.size(); ++d) {
                    g_dec(b) += br[d] * pw;
                    if (d + 1 < br.size()) gp_dec(b) += static_cast<double>(d + 1) * br[d + 1] * pw;
                    pw *= s_dec(b);
                }
            }
        }

        if (with_jacobian) {
            Eigen::RowVectorXd cx = m.C;
            if (l.mF > 0) {
                dzF = m.F.basis.jacobian(z);
                cx += (m.F.coefficients * dzF.leftCols(n));
            }
            auto row = jt.row(t);
            row = cx * S;
            row.segment(l.c(), n) += x.transpose();
            row(l.d()) += ut;
            if (l.mF > 0) row.segment(l.f(), l.mF) += zetaF.transpose();

            Eigen::MatrixXd ax = m.A;
            if (l.mE > 0) {
                dzE = m.E.basis.jacobian(z);
                ax += m.E.coefficients * dzE.leftCols(n);
            }
            if (l.r > 0) ax += dec->W * gp_dec.asDiagonal() * dec->V.topRows(n).transpose();
            Eigen::MatrixXd Sn = ax * S;
            for (Eigen::Index i = 0; i < n; ++i) {
                Sn.block(i, l.a() + i * n, 1, n) += x.transpose();
                Sn(i, l.b() + i) += ut;
                if (l.mE > 0) Sn.block(i, l.e() + i * l.mE, 1, l.mE) += zetaE.transpose();
            }
            Eigen::Index k = l.g();
            for (Eigen::Index b = 0; b < l.r; ++b) {
                for (Eigen::Index i = 0; i < n; ++i) Sn(i, l.w() + b * n + i) += g_dec(b);
                for (Eigen::Index j = 0; j <= n; ++j) Sn.col(l.v() + b * (n + 1) + j) += dec->W.col(b) * (gp_dec(b) * z(j));
                double pw = 1.0;
                for (std::size_t d = 0; d < dec->branches[static_cast<std::size_t>(b)].size(); ++d, ++k) {
                    Sn.col(k) += dec->W.col(b) * pw;
                    pw *= s_dec(b);
                }
            }
            S = std::move(Sn);
        }
        Eigen::VectorXd next = m.A * x + m.B * ut;
        if (l.mE > 0) next += m.E.coefficients * zetaE;
        if (l.r > 0) next += dec->W * g_dec;
        x = std::move(next);
    }

    Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(rec.output.data(), T) - yhat;
    if (opt.domain == CostDomain::time) {
        res.residual = e;
        if (with_jacobian) res.jacobian = -jt;
    } else {
        const std::size_t n_per = rec.period_samples;
        std::vector<std::size_t> lines = opt.lines;
        if (lines.empty())
            for (std::size_t k = 1; 2 * k < n_per; ++k) lines.push_back(k);
        if (!opt.weights.empty() && opt.weights.size() != lines.size())
            throw ConfigError("PNLSS fit: weights must match the fitted lines");
        const double scale = std::sqrt(2.0 / static_cast<double>(T));
        const auto nl = static_cast<Eigen::Index>(lines.size());
        Eigen::FFT<double> fft;
        std::vector<double> buf(static_cast<std::size_t>(T));
        std::vector<Complex> spec;
        auto transform = [&](const Eigen::Ref<const Eigen::VectorXd>& col, Eigen::Ref<Eigen::VectorXd> out) {
            for (Eigen::Index t = 0; t < T; ++t) buf[static_cast<std::size_t>(t)] = col(t);
            fft.fwd(spec, buf);
            for (Eigen::Index i = 0; i < nl; ++i) {
                const std::size_t bin = lines[static_cast<std::size_t>(i)] * rec.num_periods;
                const double wk = opt.weights.empty() ? 1.0 : 1.0 / std::sqrt(opt.weights[static_cast<std::size_t>(i)]);
                out(2 * i) = scale * wk * spec[bin].real();
                out(2 * i + 1) = scale * wk * spec[bin].imag();
            }
        };
        res.residual.resize(2 * nl);
        transform(e, res.residual);
        if (with_jacobian) {
            res.jacobian.resize(2 * nl, np);
            for (Eigen::Index j = 0; j < np; ++j) {
                Eigen::VectorXd col(2 * nl);
                transform(jt.col(j), col);
                res.jacobian.col(j) = -col;
            }
        }
    }
    res.cost = res.residual.squaredNorm();
    return res;
}

PnlssFit fit_pnlss(const PnlssModel& init, const SignalRecord& rec, const PnlssFitOptions& opt) {
    rec.validate();
    init.validate();
    const Layout l = layout_of(init);
    const Eigen::Index np = l.total();

    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < np; ++j) {
        const bool nonlinear = j >= l.e() && j < l.x0();
        const bool state0 = j >= l.x0();
        if (nonlinear && opt.freeze_nonlinear) continue;
        if (state0 && !opt.estimate_x0) continue;
        free.push_back(j);
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    const Eigen::VectorXd base = pnlss_parameters(init);

    auto expand = [&](const Eigen::VectorXd& sub) {
        Eigen::VectorXd th = base;
        for (Eigen::Index j = 0; j < nf; ++j) th(free[static_cast<std::size_t>(j)]) = sub(j);
        return th;
    };
    auto eval = [&](const Eigen::VectorXd& sub, bool jac) {
        const auto r = pnlss_residual(pnlss_with_parameters(init, expand(sub)), rec, opt, jac);
        detail::LmEvaluation ev;
        ev.cost = r.cost;
        if (!std::isfinite(r.cost)) return ev;
        ev.residual = r.residual;
        if (jac) {
            ev.jacobian.resize(r.jacobian.rows(), nf);
            for (Eigen::Index j = 0; j < nf; ++j) ev.jacobian.col(j) = r.jacobian.col(free[static_cast<std::size_t>(j)]);
        }
        return ev;
    };

    Eigen::VectorXd sub0(nf);
    for (Eigen::Index j = 0; j < nf; ++j) sub0(j) = base(free[static_cast<std::size_t>(j)]);
    if (!std::isfinite(pnlss_residual(init, rec, opt, false).cost))
        throw DivergenceError("PNLSS fit: initial model diverges on the training record", 0);

    const double y_energy =
        Eigen::Map<const Eigen::VectorXd>(rec.output.data(), static_cast<Eigen::Index>(rec.size())).squaredNorm();
    detail::LmOptions lo;
    lo.max_iterations = opt.max_iterations;
    lo.cost_tolerance = opt.cost_tolerance;
    lo.gradient_tolerance = opt.gradient_tolerance;
    lo.absolute_cost = 1e-28 * y_energy;
    const auto lm = detail::levenberg_marquardt(sub0, eval, lo);
    if (lm.stop == detail::LmStop::damping_ceiling && lm.cost_history.size() == 1 && !lm.ever_finite_trial)
        throw DivergenceError("PNLSS fit: every trial step diverges at the damping ceiling", 0);

    PnlssFit out;
    FitReport& rep = out.report;
    rep.cost_history = lm.cost_history;
    rep.iterations = lm.iterations;
    rep.final_cost = lm.last.cost;
    switch (lm.stop) {
        case detail::LmStop::cost: rep.status = FitStatus::converged_cost; break;
        case detail::LmStop::gradient: rep.status = FitStatus::converged_gradient; break;
        case detail::LmStop::max_iterations: rep.status = FitStatus::max_iterations; break;
        case detail::LmStop::damping_ceiling: rep.status = FitStatus::damping_ceiling; break;
    }
    out.model = pnlss_with_parameters(init, expand(lm.theta));

    const auto sim = simulate_pnlss(out.model, rec.input);
    double s = 0.0;
    for (std::size_t t = 0; t < sim.output.size(); ++t) {
        const double e = rec.output[t] - sim.output[t];
        s += e * e;
    }
    rep.final_rms = sim.status == SimStatus::ok ? std::sqrt(s / static_cast<double>(rec.size())) : kInf;
    if (opt.domain == CostDomain::frequency) {
        const Eigen::VectorXd& r = lm.last.residual;
        rep.line_error.resize(static_cast<std::size_t>(r.size() / 2));
        const double scale = std::sqrt(2.0 / static_cast<double>(rec.size()));
        for (std::size_t i = 0; i < rep.line_error.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const double wk = opt.weights.empty() ? 1.0 : std::sqrt(opt.weights[i]);
            rep.line_error[i] = std::hypot(r(2 * k), r(2 * k + 1)) * wk / scale;
        }
    }
    return out;
}

PnlssModel with_decoupled_state_map(const PnlssModel& m, DecoupledFunction d) {
    PnlssModel out = m;
    out.state_decoupled = std::move(d);
    out.validate();
    return out;
}

Eigen::MatrixXd state_input_samples(const PnlssModel& m, std::span<const double> u) {
    const auto sim = simulate_pnlss(m, u);
    const Eigen::Index rows = sim.states.rows();
    Eigen::MatrixXd z(rows, m.state_dim() + 1);
    z.leftCols(m.state_dim()) = sim.states;
    for (Eigen::Index t = 0; t < rows; ++t) z(t, m.state_dim()) = u[static_cast<std::size_t>(t)];
    return z;
}

const char* to_string(FitStatus s) {
    switch (s) {
        case FitStatus::converged_cost: return "converged_cost";
        case FitStatus::converged_gradient: return "converged_gradient";
        case FitStatus::max_iterations: return "max_iterations";
        case FitStatus::damping_ceiling: return "damping_ceiling";
    }
    return "max_iterations";
}

}  // namespace nlsid
