#include "nlsid/decouple.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lm.hpp"
#include "nlsid/error.hpp"

namespace nlsid {

namespace {

double poly_value(const std::vector<double>& c, double x) {
    double acc = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
    return acc;
}

double poly_derivative(const std::vector<double>& c, double x) {
    double acc = 0.0;
    for (std::size_t d = c.size(); d-- > 1;) acc = acc * x + static_cast<double>(d) * c[d];
    return acc;
}

int total_degree(const PolyMap& f) {
    int deg = 0;
    for (std::size_t m = 0; m < f.basis.size(); ++m) {
        if (f.coefficients.col(static_cast<Eigen::Index>(m)).isZero(0.0)) continue;
        const auto& e = f.basis.exponents()[m];
        deg = std::max(deg, std::accumulate(e.begin(), e.end(), 0));
    }
    return deg;
}

Eigen::MatrixXd solve_gram(const Eigen::MatrixXd& rhs, const Eigen::MatrixXd& gram) {
    // rhs * gram^+ with gram symmetric PSD.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
    return cod.solve(rhs.transpose()).transpose();
}

double tensor_error(const std::vector<Eigen::MatrixXd>& slices, const Eigen::MatrixXd& W, const Eigen::MatrixXd& V,
                    const Eigen::MatrixXd& H) {
    double err = 0.0;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        const Eigen::MatrixXd model = W * H.row(static_cast<Eigen::Index>(k)).asDiagonal() * V.transpose();
        err += (slices[k] - model).squaredNorm();
    }
    return err;
}

// Given W, recover V and H from the slices: rows of W^+ J_k are h_kr v_r^T.
void factors_from_w(const std::vector<Eigen::MatrixXd>& slices, const Eigen::MatrixXd& W, Eigen::MatrixXd& V,
                    Eigen::MatrixXd& H) {
    const Eigen::Index r = W.cols(), np = slices.front().cols();
    const auto nk = static_cast<Eigen::Index>(slices.size());
    const Eigen::MatrixXd wp = W.completeOrthogonalDecomposition().pseudoInverse();
    V.resize(np, r);
    H.resize(nk, r);
    for (Eigen::Index i = 0; i < r; ++i) {
        Eigen::MatrixXd rows(nk, np);
        for (Eigen::Index k = 0; k < nk; ++k) rows.row(k) = wp.row(i) * slices[static_cast<std::size_t>(k)];
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeThinV);
        V.col(i) = svd.matrixV().col(0);
        H.col(i) = rows * V.col(i);
    }
}

// Generalized eigenvalue initialization; false when it does not apply or yields complex factors.
bool gevd_init(const std::vector<Eigen::MatrixXd>& slices, int rank, std::mt19937_64& rng, Eigen::MatrixXd& W,
               Eigen::MatrixXd& V, Eigen::MatrixXd& H) {
    const Eigen::Index nq = slices.front().rows(), np = slices.front().cols();
    const auto nk = static_cast<Eigen::Index>(slices.size());
    if (rank > nq || rank > np || nk < 2) return false;
    Eigen::MatrixXd x1(nq, np * nk), x2(np, nq * nk);
    for (Eigen::Index k = 0; k < nk; ++k) {
        x1.middleCols(k * np, np) = slices[static_cast<std::size_t>(k)];
        x2.middleCols(k * nq, nq) = slices[static_cast<std::size_t>(k)].transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> s1(x1, Eigen::ComputeThinU), s2(x2, Eigen::ComputeThinU);
    const Eigen::MatrixXd u1 = s1.matrixU().leftCols(rank), u2 = s2.matrixU().leftCols(rank);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd t1 = Eigen::MatrixXd::Zero(rank, rank), t2 = Eigen::MatrixXd::Zero(rank, rank);
    for (Eigen::Index k = 0; k < nk; ++k) {
        const Eigen::MatrixXd s = u1.transpose() * slices[static_cast<std::size_t>(k)] * u2;
        t1 += nd(rng) * s;
        t2 += nd(rng) * s;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(t2);
    if (!lu.isInvertible()) return false;
    Eigen::EigenSolver<Eigen::MatrixXd> es(t1 * lu.inverse());
    if (es.info() != Eigen::Success) return false;
    const Eigen::MatrixXcd vec = es.eigenvectors();
    if (vec.imag().norm() > 1e-8 * vec.real().norm()) return false;
    W = u1 * vec.real();
    factors_from_w(slices, W, V, H);
    return W.allFinite() && V.allFinite() && H.allFinite();
}

struct Cloud {
    Eigen::MatrixXd points;  // rows
    Eigen::MatrixXd values;  // rows: f(p)
};

Cloud make_cloud(const PolyMap& f, const PointCloud& dom, std::size_t n, std::uint64_t seed) {
    Cloud c;
    c.points = dom.sample(n, seed);
    c.values.resize(c.points.rows(), f.num_outputs());
    for (Eigen::Index k = 0; k < c.points.rows(); ++k)
        c.values.row(k) = eval_polymap(f, c.points.row(k).transpose()).transpose();
    return c;
}

// Least-squares branch coefficients (degree 0..deg) given W and V.
std::vector<std::vector<double>> fit_branches(const Cloud& cloud, const Eigen::MatrixXd& W, const Eigen::MatrixXd& V,
                                              int degree, const Eigen::VectorXd& wsqrt) {
    const Eigen::Index nq = W.rows(), r = W.cols(), nk = cloud.points.rows();
    const Eigen::Index per = degree + 1;
    Eigen::MatrixXd K(nk * nq, r * per);
    Eigen::VectorXd rhs(nk * nq);
    const Eigen::MatrixXd x = cloud.points * V;  // nk x r
    for (Eigen::Index k = 0; k < nk; ++k)
        for (Eigen::Index i = 0; i < nq; ++i) {
            const Eigen::Index row = k * nq + i;
            rhs(row) = wsqrt(i) * cloud.values(k, i);
            for (Eigen::Index b = 0; b < r; ++b) {
                double p = 1.0;
                for (Eigen::Index d = 0; d < per; ++d) {
                    K(row, b * per + d) = wsqrt(i) * W(i, b) * p;
                    p *= x(k, b);
                }
            }
        }
    const auto ls = solve_least_squares(K, rhs);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(per)));
    for (Eigen::Index b = 0; b < r; ++b)
        for (Eigen::Index d = 0; d < per; ++d)
            out[static_cast<std::size_t>(b)][static_cast<std::size_t>(d)] = ls.coefficients(b * per + d);
    return out;
}

std::pair<double, double> residual_stats(const DecoupledFunction& d, const Cloud& cloud, const Eigen::VectorXd& w) {
    double max_abs = 0.0, sum = 0.0;
    const double wsum = w.sum();
    for (Eigen::Index k = 0; k < cloud.points.rows(); ++k) {
        const Eigen::VectorXd q = eval_decoupled(d, cloud.points.row(k).transpose());
        for (Eigen::Index i = 0; i < q.size(); ++i) {
            const double e = cloud.values(k, i) - q(i);
            if (w(i) > 0.0) max_abs = std::max(max_abs, std::abs(e));
            sum += w(i) * e * e;
        }
    }
    const double denom = static_cast<double>(cloud.points.rows()) * wsum;
    return {max_abs, denom > 0.0 ? std::sqrt(sum / denom) : 0.0};
}

Eigen::VectorXd output_weights(const std::vector<double>& w, int nq) {
    if (w.empty()) return Eigen::VectorXd::Ones(nq);
    if (static_cast<int>(w.size()) != nq) throw ConfigError("decouple: one weight per output is required");
    Eigen::VectorXd out(nq);
    for (int i = 0; i < nq; ++i) {
        if (w[static_cast<std::size_t>(i)] < 0.0) throw ConfigError("decouple: weights must be nonnegative");
        out(i) = w[static_cast<std::size_t>(i)];
    }
    if (out.sum() <= 0.0) throw ConfigError("decouple: at least one output weight must be positive");
    return out;
}

// CPD of the (weighted) Jacobian tensor on the cloud, then LS branches.
DecoupleResult cpd_decouple(const PolyMap& f, int rank, int degree, const DecoupleOptions& opt, const Cloud& cloud,
                            const Eigen::VectorXd& w) {
    const Eigen::VectorXd wsqrt = w.cwiseSqrt();
    std::vector<Eigen::MatrixXd> slices;
    slices.reserve(static_cast<std::size_t>(cloud.points.rows()));
    for (Eigen::Index k = 0; k < cloud.points.rows(); ++k)
        slices.push_back(wsqrt.asDiagonal() * jacobian_polymap(f, cloud.points.row(k).transpose()));

    DecoupleResult res;
    res.cpd = cpd_als(slices, rank, opt.seed, opt.max_sweeps, opt.tolerance, opt.max_restarts);
    res.status = res.cpd.converged ? DecoupleStatus::converged : DecoupleStatus::not_converged;
    Eigen::MatrixXd W = res.cpd.W;
    for (Eigen::Index i = 0; i < W.rows(); ++i)
        if (wsqrt(i) > 0.0) W.row(i) /= wsqrt(i);
    DecoupledFunction d;
    d.W = W;
    d.V = res.cpd.V;
    d.branches = fit_branches(cloud, d.W, d.V, degree, wsqrt);
    res.function = normalize(std::move(d));
    return res;
}

}  // namespace

int DecoupledFunction::branch_degree(std::size_t i, double tol) const {
    const auto& c = branches.at(i);
    double mx = 0.0;
    for (double v : c) mx = std::max(mx, std::abs(v));
    for (std::size_t d = c.size(); d-- > 0;)
        if (std::abs(c[d]) > tol * mx) return static_cast<int>(d);
    return 0;
}

void DecoupledFunction::validate() const {
    if (branches.empty()) throw ConfigError("decoupled function: at least one branch is required");
    const auto r = static_cast<Eigen::Index>(branches.size());
    if (W.cols() != r || V.cols() != r)
        throw ConfigError("decoupled function: W and V must have one column per branch");
    for (const auto& b : branches)
        if (b.size() < 2) throw ConfigError("decoupled function: branch degree must be at least 1");
}

Eigen::VectorXd eval_decoupled(const DecoupledFunction& d, const Eigen::Ref<const Eigen::VectorXd>& p) {
    d.validate();
    if (p.size() != d.V.rows()) throw ConfigError("decoupled function: input dimension mismatch");
    const Eigen::VectorXd x = d.V.transpose() * p;
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) g(i) = poly_value(d.branches[static_cast<std::size_t>(i)], x(i));
    return d.W * g;
}

Eigen::MatrixXd jacobian_decoupled(const DecoupledFunction& d, const Eigen::Ref<const Eigen::VectorXd>& p) {
    d.validate();
    const Eigen::VectorXd x = d.V.transpose() * p;
    Eigen::VectorXd gp(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) gp(i) = poly_derivative(d.branches[static_cast<std::size_t>(i)], x(i));
    return d.W * gp.asDiagonal() * d.V.transpose();
}

PointCloud PointCloud::box(int dim, double lo, double hi) {
    PointCloud c;
    c.lower = Eigen::VectorXd::Constant(dim, lo);
    c.upper = Eigen::VectorXd::Constant(dim, hi);
    return c;
}

PointCloud PointCloud::empirical_range(const Eigen::MatrixXd& samples) {
    if (samples.rows() == 0) throw ConfigError("point cloud: no samples");
    PointCloud c;
    c.lower = samples.colwise().minCoeff().transpose();
    c.upper = samples.colwise().maxCoeff().transpose();
    return c;
}

Eigen::MatrixXd PointCloud::sample(std::size_t n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    if (points) {
        if (points->rows() == 0) throw ConfigError("point cloud: explicit cloud is empty");
        std::uniform_int_distribution<Eigen::Index> pick(0, points->rows() - 1);
        Eigen::MatrixXd out(static_cast<Eigen::Index>(n), points->cols());
        for (Eigen::Index k = 0; k < out.rows(); ++k) out.row(k) = points->row(pick(rng));
        return out;
    }
    if (lower.size() != upper.size()) throw ConfigError("point cloud: bounds have different dimensions");
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), lower.size());
    for (Eigen::Index k = 0; k < out.rows(); ++k)
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(k, j) = lower(j) + (upper(j) - lower(j)) * uni(rng);
    return out;
}

CpdResult cpd_als(const std::vector<Eigen::MatrixXd>& slices, int rank, std::uint64_t seed, int max_sweeps,
                  double tolerance, int max_restarts) {
    if (rank < 1) throw ConfigError("CPD: rank must be at least 1");
    if (slices.empty()) throw ConfigError("CPD: no tensor slices");
    const Eigen::Index nq = slices.front().rows(), np = slices.front().cols();
    const auto nk = static_cast<Eigen::Index>(slices.size());
    double norm2 = 0.0;
    for (const auto& s : slices) norm2 += s.squaredNorm();
    if (norm2 == 0.0) throw NumericError("CPD: the Jacobian tensor is identically zero");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    CpdResult best;
    best.relative_error = std::numeric_limits<double>::infinity();
    const double exact_level = 1e-8;

    for (int attempt = 0; attempt <= max_restarts; ++attempt) {
        Eigen::MatrixXd W, V, H;
        const bool gevd = attempt == 0 && gevd_init(slices, rank, rng, W, V, H);
        if (!gevd) {
            W = Eigen::MatrixXd::NullaryExpr(nq, rank, [&]() { return nd(rng); });
            V = Eigen::MatrixXd::NullaryExpr(np, rank, [&]() { return nd(rng); });
            H = Eigen::MatrixXd::NullaryExpr(nk, rank, [&]() { return nd(rng); });
        }
        CpdResult cur;
        cur.restarts = attempt;
        double err = tensor_error(slices, W, V, H) / norm2;
        cur.fit_history.push_back(std::sqrt(err));
        for (int sweep = 0; sweep < max_sweeps; ++sweep) {
            // W update
            Eigen::MatrixXd m = Eigen::MatrixXd::Zero(nq, rank);
            for (Eigen::Index k = 0; k < nk; ++k)
                m += slices[static_cast<std::size_t>(k)] * V * H.row(k).asDiagonal();
            W = solve_gram(m, (V.transpose() * V).cwiseProduct(H.transpose() * H));
            // V update
            m = Eigen::MatrixXd::Zero(np, rank);
            for (Eigen::Index k = 0; k < nk; ++k)
                m += slices[static_cast<std::size_t>(k)].transpose() * W * H.row(k).asDiagonal();
            V = solve_gram(m, (W.transpose() * W).cwiseProduct(H.transpose() * H));
            // H update, one row per slice
            const Eigen::MatrixXd gram = (W.transpose() * W).cwiseProduct(V.transpose() * V);
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
            for (Eigen::Index k = 0; k < nk; ++k) {
                const Eigen::MatrixXd& s = slices[static_cast<std::size_t>(k)];
                Eigen::VectorXd rhs(rank);
                for (Eigen::Index r = 0; r < rank; ++r) rhs(r) = W.col(r).dot(s * V.col(r));
                H.row(k) = cod.solve(rhs).transpose();
            }
            // Rebalance column norms between W and V to keep the sweep well conditioned.
            for (Eigen::Index r = 0; r < rank; ++r) {
                const double a = W.col(r).norm(), b = V.col(r).norm();
                if (a > 0.0 && b > 0.0) {
                    W.col(r) /= a;
                    V.col(r) /= b;
                    H.col(r) *= a * b;
                }
            }
            const double next = tensor_error(slices, W, V, H) / norm2;
            cur.sweeps = sweep + 1;
            cur.fit_history.push_back(std::sqrt(next));
            const double change = std::abs(err - next) / std::max(err, 1e-300);
            err = next;
            if (std::sqrt(err) < 1e-14 || change < tolerance) break;
        }
        cur.W = W;
        cur.V = V;
        cur.H = H;
        cur.relative_error = std::sqrt(err);
        cur.converged = cur.relative_error < exact_level;
        if (cur.relative_error < best.relative_error) best = cur;
        if (best.converged) break;
    }
    return best;
}

DecoupledFunction normalize(DecoupledFunction d) {
    d.validate();
    const auto r = static_cast<std::size_t>(d.rank());
    for (std::size_t i = 0; i < r; ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        auto& c = d.branches[i];
        // V column to unit norm with a positive dominant entry: g(x) -> g(a x).
        double a = d.V.col(col).norm();
        if (a > 0.0) {
            Eigen::Index idx = 0;
            d.V.col(col).cwiseAbs().maxCoeff(&idx);
            if (d.V(idx, col) < 0.0) a = -a;
            d.V.col(col) /= a;
            double p = 1.0;
            for (auto& v : c) {
                v *= p;
                p *= a;
            }
        }
        double b = d.W.col(col).norm();
        if (b > 0.0) {
            Eigen::Index idx = 0;
            d.W.col(col).cwiseAbs().maxCoeff(&idx);
            if (d.W(idx, col) < 0.0) b = -b;
            d.W.col(col) /= b;
            for (auto& v : c) v *= b;
        }
    }
    std::vector<std::size_t> order(r);
    std::iota(order.begin(), order.end(), 0);
    auto scale = [&](std::size_t i) {
        double s = 0.0;
        for (double v : d.branches[i]) s += v * v;
        return std::sqrt(s);
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scale(a) > scale(b); });
    DecoupledFunction out;
    out.W.resize(d.W.rows(), d.W.cols());
    out.V.resize(d.V.rows(), d.V.cols());
    for (std::size_t i = 0; i < r; ++i) {
        out.W.col(static_cast<Eigen::Index>(i)) = d.W.col(static_cast<Eigen::Index>(order[i]));
        out.V.col(static_cast<Eigen::Index>(i)) = d.V.col(static_cast<Eigen::Index>(order[i]));
        out.branches.push_back(d.branches[order[i]]);
    }
    return out;
}

DecoupleResult decouple_exact(const PolyMap& f, int rank, const DecoupleOptions& opt) {
    if (rank < 1) throw ConfigError("decouple: rank must be at least 1");
    const int deg = total_degree(f);
    if (deg < 2) throw ConfigError("decouple: polynomial total degree must be at least 2");
    const PointCloud dom = opt.domain.value_or(PointCloud::box(f.num_vars()));
    const int branch_deg = opt.branch_degree > 0 ? opt.branch_degree : deg;
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(f.num_outputs());
    const Cloud train = make_cloud(f, dom, opt.num_points, opt.seed);
    auto res = cpd_decouple(f, rank, branch_deg, opt, train, w);
    const Cloud test = make_cloud(f, dom, opt.test_points, opt.seed + 0x5bd1e995ULL);
    std::tie(res.max_residual, res.rms_residual) = residual_stats(res.function, test, w);
    return res;
}

ApproxResult refine_decoupled(const PolyMap& f, DecoupledFunction start, const ApproxOptions& opt) {
    start.validate();
    const auto& base = opt.base;
    const PointCloud dom = base.domain.value_or(PointCloud::box(f.num_vars()));
    const Eigen::VectorXd w = output_weights(opt.output_weights, f.num_outputs());
    const Eigen::VectorXd wsqrt = w.cwiseSqrt();
    const Cloud train = make_cloud(f, dom, base.num_points, base.seed);

    const Eigen::Index nq = start.W.rows(), np = start.V.rows(), r = start.W.cols();
    const auto per = static_cast<Eigen::Index>(start.branches.front().size());
    for (const auto& b : start.branches)
        if (static_cast<Eigen::Index>(b.size()) != per) throw ConfigError("decouple: branches must share a degree");
    const Eigen::Index nW = nq * r, nV = np * r, np_total = nW + nV + r * per;

    auto unpack = [&](const Eigen::VectorXd& th) {
        DecoupledFunction d;
        d.W = Eigen::Map<const Eigen::MatrixXd>(th.data(), nq, r);
        d.V = Eigen::Map<const Eigen::MatrixXd>(th.data() + nW, np, r);
        d.branches.assign(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(per)));
        for (Eigen::Index b = 0; b < r; ++b)
            for (Eigen::Index k = 0; k < per; ++k)
                d.branches[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] = th(nW + nV + b * per + k);
        return d;
    };
    Eigen::VectorXd theta(np_total);
    theta.head(nW) = Eigen::Map<const Eigen::VectorXd>(start.W.data(), nW);
    theta.segment(nW, nV) = Eigen::Map<const Eigen::VectorXd>(start.V.data(), nV);
    for (Eigen::Index b = 0; b < r; ++b)
        for (Eigen::Index k = 0; k < per; ++k)
            theta(nW + nV + b * per + k) = start.branches[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];

    const Eigen::Index npts = train.points.rows();
    auto eval = [&](const Eigen::VectorXd& th, bool jac) {
        detail::LmEvaluation ev;
        const Eigen::MatrixXd W = Eigen::Map<const Eigen::MatrixXd>(th.data(), nq, r);
        const Eigen::MatrixXd V = Eigen::Map<const Eigen::MatrixXd>(th.data() + nW, np, r);
        ev.residual.resize(npts * nq);
        if (jac) ev.jacobian = Eigen::MatrixXd::Zero(npts * nq, np_total);
        const Eigen::MatrixXd x = train.points * V;
        for (Eigen::Index k = 0; k < npts; ++k) {
            Eigen::VectorXd g(r), gp(r);
            std::vector<Eigen::VectorXd> pw(static_cast<std::size_t>(r));
            for (Eigen::Index b = 0; b < r; ++b) {
                const Eigen::VectorXd c = th.segment(nW + nV + b * per, per);
                double val = 0.0, der = 0.0, p = 1.0;
                Eigen::VectorXd powers(per);
                for (Eigen::Index d = 0; d < per; ++d) {
                    powers(d) = p;
                    val += c(d) * p;
                    if (d + 1 < per) der += static_cast<double>(d + 1) * c(d + 1) * p;
                    p *= x(k, b);
                }
                g(b) = val;
                gp(b) = der;
                pw[static_cast<std::size_t>(b)] = powers;
            }
            const Eigen::VectorXd q = W * g;
            for (Eigen::Index i = 0; i < nq; ++i) {
                const Eigen::Index row = k * nq + i;
                ev.residual(row) = wsqrt(i) * (train.values(k, i) - q(i));
                if (!jac) continue;
                for (Eigen::Index b = 0; b < r; ++b) {
                    ev.jacobian(row, b * nq + i) = -wsqrt(i) * g(b);
                    for (Eigen::Index j = 0; j < np; ++j)
                        ev.jacobian(row, nW + b * np + j) = -wsqrt(i) * W(i, b) * gp(b) * train.points(k, j);
                    ev.jacobian.block(row, nW + nV + b * per, 1, per) =
                        -wsqrt(i) * W(i, b) * pw[static_cast<std::size_t>(b)].transpose();
                }
            }
        }
        ev.cost = ev.residual.squaredNorm();
        return ev;
    };

    detail::LmOptions lo;
    lo.max_iterations = opt.max_iterations;
    lo.cost_tolerance = 1e-12;
    lo.gradient_tolerance = 1e-10;
    lo.absolute_cost = 1e-28 * train.values.squaredNorm();
    const auto lm = detail::levenberg_marquardt(theta, eval, lo);

    ApproxResult out;
    out.function = normalize(unpack(lm.theta));
    out.report.iterations = lm.iterations;
    out.report.status = lm.stop == detail::LmStop::damping_ceiling || lm.stop == detail::LmStop::max_iterations
                            ? DecoupleStatus::not_converged
                            : DecoupleStatus::converged;
    out.report.train_rms = residual_stats(out.function, train, w).second;
    const Cloud held = make_cloud(f, dom, base.test_points, base.seed + 0x5bd1e995ULL);
    out.report.heldout_rms = residual_stats(out.function, held, w).second;
    return out;
}

ApproxResult decouple_approx(const PolyMap& f, int rank, int branch_degree, const ApproxOptions& opt) {
    if (rank < 1) throw ConfigError("decouple: rank must be at least 1");
    if (branch_degree < 1) throw ConfigError("decouple: branch degree must be at least 1");
    const PointCloud dom = opt.base.domain.value_or(PointCloud::box(f.num_vars()));
    const Eigen::VectorXd w = output_weights(opt.output_weights, f.num_outputs());
    const Cloud train = make_cloud(f, dom, opt.base.num_points, opt.base.seed);
    const auto init = cpd_decouple(f, rank, branch_degree, opt.base, train, w);
    return refine_decoupled(f, init.function, opt);
}

std::vector<ApproxResult> decouple_sweep(const PolyMap& f, int max_rank, int branch_degree, const ApproxOptions& opt) {
    if (max_rank < 1) throw ConfigError("decouple sweep: max_rank must be at least 1");
    std::vector<ApproxResult> out;
    for (int r = 1; r <= max_rank; ++r) {
        auto fresh = decouple_approx(f, r, branch_degree, opt);
        if (!out.empty()) {
            // Previous solution plus a zero-output branch: starts at the previous residual.
            DecoupledFunction warm = out.back().function;
            const Eigen::Index nq = warm.W.rows(), np = warm.V.rows();
            warm.W.conservativeResize(nq, r);
            warm.W.col(r - 1).setZero();
            warm.V.conservativeResize(np, r);
            std::mt19937_64 rng(opt.base.seed + static_cast<std::uint64_t>(r));
            std::normal_distribution<double> nd;
            for (Eigen::Index j = 0; j < np; ++j) warm.V(j, r - 1) = nd(rng);
            warm.V.col(r - 1).normalize();
            std::vector<double> br(static_cast<std::size_t>(branch_degree) + 1, 0.0);
            br[1] = 1.0;
            warm.branches.push_back(br);
            auto warmed = refine_decoupled(f, warm, opt);
            if (warmed.report.train_rms < fresh.report.train_rms) fresh = std::move(warmed);
            if (fresh.report.train_rms > out.back().report.train_rms) {
                // Keep the previous function with a silent extra branch so the curve never rises.
                DecoupledFunction keep = out.back().function;
                keep.W.conservativeResize(nq, r);
                keep.W.col(r - 1).setZero();
                keep.V.conservativeResize(np, r);
                keep.V.col(r - 1) = warm.V.col(r - 1);
                keep.branches.push_back(br);
                fresh.function = keep;
                fresh.report = out.back().report;
            }
        }
        out.push_back(std::move(fresh));
    }
    return out;
}

const char* to_string(DecoupleStatus s) {
    return s == DecoupleStatus::converged ? "converged" : "not_converged";
}

}  // namespace nlsid
