#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlsid/polybasis.hpp"

namespace nlsid {

/**
 * @brief Decoupled polynomial map  q = W g(V^T p).
 *
 * Branch i is the univariate polynomial g_i(x) = sum_d branches[i][d] x^d acting on
 * x_i = V.col(i)^T p.
 */
struct DecoupledFunction {
    Eigen::MatrixXd W;  // n_q x r
    Eigen::MatrixXd V;  // n_p x r
    std::vector<std::vector<double>> branches;

    [[nodiscard]] int rank() const { return static_cast<int>(branches.size()); }
    [[nodiscard]] int num_inputs() const { return static_cast<int>(V.rows()); }
    [[nodiscard]] int num_outputs() const { return static_cast<int>(W.rows()); }
    /// Highest power with a coefficient above `tol` relative to the branch's largest coefficient.
    [[nodiscard]] int branch_degree(std::size_t i, double tol = 1e-8) const;
    void validate() const;
};

[[nodiscard]] Eigen::VectorXd eval_decoupled(const DecoupledFunction& d, const Eigen::Ref<const Eigen::VectorXd>& p);
/// d q / d p, shape n_q x n_p.
[[nodiscard]] Eigen::MatrixXd jacobian_decoupled(const DecoupledFunction& d,
                                                 const Eigen::Ref<const Eigen::VectorXd>& p);

/// Where sample points are drawn: a box, or an explicit cloud (rows are points).
struct PointCloud {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    std::optional<Eigen::MatrixXd> points;

    static PointCloud box(int dim, double lo = -1.0, double hi = 1.0);
    /// Axis-aligned box spanning the empirical range of `samples` (rows are points).
    static PointCloud empirical_range(const Eigen::MatrixXd& samples);
    /// Draws n points (uniform in the box, or resampled rows of the explicit cloud).
    [[nodiscard]] Eigen::MatrixXd sample(std::size_t n, std::uint64_t seed) const;
};

enum class DecoupleStatus { converged, not_converged };

struct CpdResult {
    Eigen::MatrixXd W, V, H;             // factor matrices of the Jacobian tensor
    std::vector<double> fit_history;     // relative tensor error per accepted sweep
    double relative_error = 0.0;
    int sweeps = 0;
    int restarts = 0;
    bool converged = false;
};

struct DecoupleResult {
    DecoupledFunction function;
    DecoupleStatus status = DecoupleStatus::converged;
    double max_residual = 0.0;   // max |f - W g(V^T p)| over a fresh test cloud
    double rms_residual = 0.0;
    CpdResult cpd;
};

struct DecoupleOptions {
    std::size_t num_points = 200;
    std::size_t test_points = 1000;
    std::uint64_t seed = 1;
    std::optional<PointCloud> domain;  // default: [-1, 1]^n_p
    int max_sweeps = 2000;
    double tolerance = 1e-10;
    int max_restarts = 5;
    int branch_degree = 0;  // 0: total degree of f
};

/// Rank-r CPD of the Jacobian tensor by alternating least squares.
[[nodiscard]] CpdResult cpd_als(const std::vector<Eigen::MatrixXd>& slices, int rank, std::uint64_t seed,
                                int max_sweeps = 2000, double tolerance = 1e-10, int max_restarts = 5);

[[nodiscard]] DecoupleResult decouple_exact(const PolyMap& f, int rank, const DecoupleOptions& options = {});

struct ApproxOptions {
    DecoupleOptions base;
    std::vector<double> output_weights;  // empty: all ones
    int max_iterations = 200;
};

struct ApproxReport {
    double train_rms = 0.0;    // weighted RMS on the training cloud
    double heldout_rms = 0.0;  // weighted RMS on a held-out cloud
    int iterations = 0;
    DecoupleStatus status = DecoupleStatus::converged;
};

struct ApproxResult {
    DecoupledFunction function;
    ApproxReport report;
};

/// CPD initialization followed by joint Levenberg-Marquardt refinement of W, V and the branches.
[[nodiscard]] ApproxResult decouple_approx(const PolyMap& f, int rank, int branch_degree,
                                           const ApproxOptions& options = {});
/// Same, refining from a given starting point instead of a CPD.
[[nodiscard]] ApproxResult refine_decoupled(const PolyMap& f, DecoupledFunction start, const ApproxOptions& options);

/// decouple_approx for r = 1..max_rank, each rank warm-started from the previous one as well.
/// The training residual is non-increasing in r.
[[nodiscard]] std::vector<ApproxResult> decouple_sweep(const PolyMap& f, int max_rank, int branch_degree,
                                                       const ApproxOptions& options = {});

/// Unit-norm V and W columns (scales absorbed in the branches), branches sorted by descending scale.
[[nodiscard]] DecoupledFunction normalize(DecoupledFunction d);

[[nodiscard]] const char* to_string(DecoupleStatus s);

}  // namespace nlsid
