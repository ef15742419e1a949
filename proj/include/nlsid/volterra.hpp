#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlsid/narx.hpp"
#include "nlsid/signals.hpp"

namespace nlsid {

/**
 * Prior covariance families for the kernels.
 *   diagonal_decay: P[i][j] = c lambda^i delta_ij
 *   tc:             P[i][j] = c lambda^max(i,j)
 *   dc:             P[i][j] = c lambda^max(i,j) rho^|i-j|
 */
enum class KernelFamily { diagonal_decay, tc, dc };
enum class Tuning { fixed, marginal_likelihood_grid };

struct KernelHyper {
    double scale = 1.0;        // c
    double decay = 0.8;        // lambda
    double correlation = 0.9;  // rho, dc family only
};

struct RegularizerSpec {
    KernelFamily family = KernelFamily::dc;
    KernelHyper first;   // h1 prior
    KernelHyper second;  // h2 prior
    Tuning tuning = Tuning::fixed;
    /// Candidate values used by grid tuning (shared by both kernels).
    std::vector<double> scale_grid{1e-2, 1e2, 1e6};
    std::vector<double> decay_grid{0.5, 0.7, 0.9};
    std::vector<double> correlation_grid{0.3, 0.6, 0.9};
    /// Prior variance of h0; large enough to leave the offset effectively unpenalized.
    double constant_variance = 1e8;
};

/**
 * @brief Volterra model up to degree 2 with memory m:
 *   y(t) = h0 + sum_i h1[i] u(t-i) + sum_{i,j} h2[i][j] u(t-i) u(t-j).
 */
struct VolterraModel {
    int m = 1;
    int degree = 2;
    double h0 = 0.0;
    Eigen::VectorXd h1;
    Eigen::MatrixXd h2;  // symmetric, zero when degree < 2
    KernelFamily family = KernelFamily::dc;
    KernelHyper first;
    KernelHyper second;
    double log_marginal_likelihood = 0.0;
    std::vector<std::string> warnings;

    void validate() const;
    /// Parameter count: 1 + m (+ m(m+1)/2).
    [[nodiscard]] std::size_t num_parameters() const;
};

struct Priors {
    Eigen::MatrixXd P1;  // m x m
    Eigen::MatrixXd P2;  // m(m+1)/2 square over upper-triangle pairs; empty when degree < 2
};

/// Single-kernel prior over m lags; throws ConfigError naming the smallest eigenvalue if not SPD.
[[nodiscard]] Eigen::MatrixXd kernel_prior(KernelFamily family, const KernelHyper& h, int m);
/**
 * Quadratic-kernel prior over the upper-triangle pairs (i <= j) in row-major order:
 * 0.5 * [k(i1,i2) k(j1,j2) + k(i1,j2) k(j1,i2)] with k the single-kernel prior.
 */
[[nodiscard]] Eigen::MatrixXd quadratic_prior(KernelFamily family, const KernelHyper& h, int m);
[[nodiscard]] Priors build_prior(const RegularizerSpec& reg, int m, int degree);

/**
 * Regression matrix rows for t = m-1 .. N-1: [1, u(t..t-m+1), w_ij u(t-i) u(t-j) for i <= j]
 * with w_ii = 1 and w_ij = 2, so the quadratic coefficients are the upper triangle of h2.
 */
[[nodiscard]] Eigen::MatrixXd volterra_regressors(std::span<const double> u, int m, int degree);
/// Parameter vector [h0, h1, h2 upper triangle] matching volterra_regressors.
[[nodiscard]] Eigen::VectorXd volterra_parameters(const VolterraModel& mdl);

/// Regularized least squares; grid tuning maximizes the marginal likelihood.
[[nodiscard]] VolterraModel fit_volterra(const SignalRecord& rec, int m, int degree, const RegularizerSpec& reg);

/// Model output; the first m-1 samples are NaN.
[[nodiscard]] Trajectory eval_volterra(const VolterraModel& mdl, std::span<const double> u);

[[nodiscard]] const char* to_string(KernelFamily f);
[[nodiscard]] KernelFamily kernel_family_from_string(const std::string& name);
[[nodiscard]] const char* to_string(Tuning t);
[[nodiscard]] Tuning tuning_from_string(const std::string& name);

}  // namespace nlsid
