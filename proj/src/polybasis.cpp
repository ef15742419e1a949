#include "nlsid/polybasis.hpp"

#include <algorithm>
#include <cmath>

#include "nlsid/error.hpp"

namespace nlsid {

namespace {

constexpr double kMaxMonomials = 1e7;

// Exponent vectors of total degree d in descending lexicographic order.
void append_degree(int num_vars, int degree, std::vector<Exponents>& out) {
    Exponents e(static_cast<std::size_t>(num_vars), 0);
    if (num_vars == 0) {
        if (degree == 0) out.push_back(e);
        return;
    }
    // Recursive fill: first variable takes the largest share first.
    auto rec = [&](auto&& self, int var, int remaining) -> void {
        if (var == num_vars - 1) {
            e[static_cast<std::size_t>(var)] = remaining;
            out.push_back(e);
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            e[static_cast<std::size_t>(var)] = k;
            self(self, var + 1, remaining - k);
        }
    };
    rec(rec, 0, degree);
}

}  // namespace

double MonomialBasis::count(int num_vars, int degree_min, int degree_max) {
    double total = 0.0;
    for (int d = degree_min; d <= degree_max; ++d) {
        // C(n+d-1, d)
        double c = 1.0;
        for (int i = 1; i <= d; ++i) c = c * (num_vars + i - 1) / i;
        if (num_vars == 0) c = d == 0 ? 1.0 : 0.0;
        total += c;
    }
    return total;
}

MonomialBasis::MonomialBasis(int num_vars, int degree_min, int degree_max)
    : num_vars_(num_vars), degree_min_(degree_min), degree_max_(degree_max) {
    if (num_vars < 0) throw ConfigError("monomials: num_vars must be nonnegative");
    if (degree_min < 0 || degree_max < degree_min)
        throw ConfigError("monomials: need 0 <= degree_min <= degree_max");
    const double n = count(num_vars, degree_min, degree_max);
    if (n > kMaxMonomials)
        throw ConfigError("monomials: basis would have " + std::to_string(static_cast<long long>(n)) +
                          " terms (limit 1e7)");
    exponents_.reserve(static_cast<std::size_t>(n));
    for (int d = degree_min; d <= degree_max; ++d) append_degree(num_vars, d, exponents_);
}

MonomialBasis MonomialBasis::from_exponents(int num_vars, int degree_min, int degree_max,
                                            std::vector<Exponents> exponents) {
    MonomialBasis b(num_vars, degree_min, degree_max);
    if (b.exponents_ != exponents)
        throw ConfigError("monomials: stored exponent list does not match graded-lex ordering");
    return b;
}

MonomialBasis enumerate_monomials(int num_vars, int degree_min, int degree_max) {
    return MonomialBasis(num_vars, degree_min, degree_max);
}

void MonomialBasis::powers(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::MatrixXd& table) const {
    if (x.size() != num_vars_)
        throw ConfigError("monomials: expected " + std::to_string(num_vars_) + " variables, got " +
                          std::to_string(x.size()));
    table.resize(num_vars_, degree_max_ + 1);
    for (int j = 0; j < num_vars_; ++j) {
        table(j, 0) = 1.0;
        for (int d = 1; d <= degree_max_; ++d) table(j, d) = table(j, d - 1) * x(j);
    }
}

Eigen::VectorXd MonomialBasis::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::MatrixXd pw;
    powers(x, pw);
    Eigen::VectorXd out(static_cast<Eigen::Index>(exponents_.size()));
    for (std::size_t m = 0; m < exponents_.size(); ++m) {
        double v = 1.0;
        for (int j = 0; j < num_vars_; ++j) v *= pw(j, exponents_[m][static_cast<std::size_t>(j)]);
        out(static_cast<Eigen::Index>(m)) = v;
    }
    return out;
}

Eigen::MatrixXd MonomialBasis::jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::MatrixXd pw;
    powers(x, pw);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(exponents_.size()), num_vars_);
    for (std::size_t m = 0; m < exponents_.size(); ++m) {
        const auto& e = exponents_[m];
        for (int j = 0; j < num_vars_; ++j) {
            const int ej = e[static_cast<std::size_t>(j)];
            if (ej == 0) continue;
            double v = ej * pw(j, ej - 1);
            for (int i = 0; i < num_vars_; ++i)
                if (i != j) v *= pw(i, e[static_cast<std::size_t>(i)]);
            jac(static_cast<Eigen::Index>(m), j) = v;
        }
    }
    return jac;
}

PolyMap::PolyMap(MonomialBasis b, Eigen::MatrixXd c) : basis(std::move(b)), coefficients(std::move(c)) {
    if (coefficients.cols() != static_cast<Eigen::Index>(basis.size()))
        throw ConfigError("polymap: coefficient columns (" + std::to_string(coefficients.cols()) +
                          ") do not match basis size (" + std::to_string(basis.size()) + ")");
}

PolyMap PolyMap::zeros(int num_outputs, MonomialBasis b) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(num_outputs, static_cast<Eigen::Index>(b.size()));
    return PolyMap(std::move(b), std::move(c));
}

Eigen::VectorXd eval_polymap(const PolyMap& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (p.basis.size() == 0) return Eigen::VectorXd::Zero(p.coefficients.rows());
    return p.coefficients * p.basis.evaluate(x);
}

Eigen::MatrixXd jacobian_polymap(const PolyMap& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (p.basis.size() == 0) return Eigen::MatrixXd::Zero(p.coefficients.rows(), x.size());
    return p.coefficients * p.basis.jacobian(x);
}

LeastSquaresResult solve_least_squares(const Eigen::Ref<const Eigen::MatrixXd>& regressors,
                                       const Eigen::Ref<const Eigen::VectorXd>& target) {
    if (regressors.rows() != target.size()) throw ConfigError("least squares: row count mismatch");
    const Eigen::Index n = regressors.cols();
    LeastSquaresResult res;
    res.coefficients = Eigen::VectorXd::Zero(n);
    if (n == 0 || regressors.rows() == 0) return res;

    Eigen::VectorXd scale(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double s = regressors.col(j).norm() / std::sqrt(static_cast<double>(regressors.rows()));
        scale(j) = s > 0.0 ? s : 1.0;
    }
    const Eigen::MatrixXd scaled = regressors * scale.cwiseInverse().asDiagonal();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(scaled);
    cod.setThreshold(1e-12);
    res.coefficients = cod.solve(target).cwiseQuotient(scale);
    res.rank = cod.rank();
    res.rank_deficient = res.rank < n;
    return res;
}

}  // namespace nlsid
