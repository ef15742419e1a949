#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nlsid {

using Exponents = std::vector<int>;

/**
 * @brief All monomials in `num_vars` variables with total degree in [degree_min, degree_max].
 *
 * Ordering is graded lexicographic: ascending total degree, and within a degree the exponent
 * vectors in descending lexicographic order (x^2, xy, y^2 for two variables). The order is
 * part of the serialization contract.
 */
class MonomialBasis {
public:
    MonomialBasis() = default;
    MonomialBasis(int num_vars, int degree_min, int degree_max);

    /// Rebuilds from a stored exponent list (checked against the canonical ordering).
    static MonomialBasis from_exponents(int num_vars, int degree_min, int degree_max,
                                        std::vector<Exponents> exponents);

    [[nodiscard]] int num_vars() const { return num_vars_; }
    [[nodiscard]] int degree_min() const { return degree_min_; }
    [[nodiscard]] int degree_max() const { return degree_max_; }
    [[nodiscard]] std::size_t size() const { return exponents_.size(); }
    [[nodiscard]] const std::vector<Exponents>& exponents() const { return exponents_; }

    /// Values of every monomial at x.
    [[nodiscard]] Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    /// d monomial_m / d x_j, shape size() x num_vars.
    [[nodiscard]] Eigen::MatrixXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    /// Number of monomials with degree in range: sum_d C(n+d-1, d).
    [[nodiscard]] static double count(int num_vars, int degree_min, int degree_max);

private:
    void powers(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::MatrixXd& table) const;

    int num_vars_ = 0;
    int degree_min_ = 0;
    int degree_max_ = 0;
    std::vector<Exponents> exponents_;
};

[[nodiscard]] MonomialBasis enumerate_monomials(int num_vars, int degree_min, int degree_max);

/// Vector polynomial map y = C * monomials(x); C has one row per output.
struct PolyMap {
    MonomialBasis basis;
    Eigen::MatrixXd coefficients;

    PolyMap() = default;
    PolyMap(MonomialBasis b, Eigen::MatrixXd c);
    static PolyMap zeros(int num_outputs, MonomialBasis b);

    [[nodiscard]] int num_outputs() const { return static_cast<int>(coefficients.rows()); }
    [[nodiscard]] int num_vars() const { return basis.num_vars(); }
    [[nodiscard]] bool empty() const { return basis.size() == 0 || coefficients.rows() == 0; }
};

[[nodiscard]] Eigen::VectorXd eval_polymap(const PolyMap& p, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Partial derivatives, shape num_outputs x num_vars.
[[nodiscard]] Eigen::MatrixXd jacobian_polymap(const PolyMap& p, const Eigen::Ref<const Eigen::VectorXd>& x);

struct LeastSquaresResult {
    Eigen::VectorXd coefficients;
    Eigen::Index rank = 0;
    bool rank_deficient = false;
};

/**
 * @brief Minimum-norm least squares with internal column standardization.
 *
 * Columns are scaled to unit RMS before a complete orthogonal decomposition, and the
 * solution is unscaled afterwards. Zero columns get a zero coefficient.
 */
[[nodiscard]] LeastSquaresResult solve_least_squares(const Eigen::Ref<const Eigen::MatrixXd>& regressors,
                                                     const Eigen::Ref<const Eigen::VectorXd>& target);

}  // namespace nlsid
