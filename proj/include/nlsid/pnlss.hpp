#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlsid/bla.hpp"
#include "nlsid/decouple.hpp"
#include "nlsid/narx.hpp"
#include "nlsid/polybasis.hpp"
#include "nlsid/signals.hpp"

namespace nlsid {

/**
 * @brief Polynomial nonlinear state-space model (single input, single output).
 *
 *   x(t+1) = A x(t) + B u(t) + E(x(t), u(t))
 *   y(t)   = C x(t) + D u(t) + F(x(t), u(t))
 *
 * E and F are polynomial maps over z = [x; u] with monomials of degree >= 2; either may be
 * empty. When `state_decoupled` is set it replaces E in simulation and fitting; its W, V and
 * branch coefficients then take the place of the E coefficients in the parameter vector.
 */
struct PnlssModel {
    Eigen::MatrixXd A;
    Eigen::VectorXd B;
    Eigen::RowVectorXd C;
    double D = 0.0;
    PolyMap E;
    PolyMap F;
    std::optional<DecoupledFunction> state_decoupled;
    Eigen::VectorXd x0;

    [[nodiscard]] int state_dim() const { return static_cast<int>(A.rows()); }
    [[nodiscard]] bool is_linear() const;
    void validate() const;

    /// Linear model with zero nonlinear maps of the requested degrees (0 disables a map).
    static PnlssModel linear(Eigen::MatrixXd A, Eigen::VectorXd B, Eigen::RowVectorXd C, double D,
                             int state_degree = 0, int output_degree = 0);
    /// Replaces E/F by zero maps over monomials of degree 2..degree (0 disables).
    void set_nonlinear_degrees(int state_degree, int output_degree);
};

struct PnlssSimulation {
    std::vector<double> output;
    Eigen::MatrixXd states;  // rows are x(t)
    SimStatus status = SimStatus::ok;
    std::size_t divergence_index = 0;
};

[[nodiscard]] PnlssSimulation simulate_pnlss(const PnlssModel& m, std::span<const double> u);

/// C (e^{jw} I - A)^{-1} B + D.
[[nodiscard]] Complex linear_frf(const PnlssModel& m, double omega);

struct LinearInit {
    PnlssModel model;
    std::vector<double> numerator;    // b0..bn in powers of z^-1
    std::vector<double> denominator;  // 1, a1..an
    double frf_relative_error = 0.0;  // ||G_model - G_bla|| / ||G_bla|| over the lines
    std::optional<double> linear_simulation_rms;
    std::vector<std::string> warnings;
};

/// Frequency-domain rational fit (iterated Sanathanan-Koerner) converted to a balanced state space.
[[nodiscard]] LinearInit init_linear_from_bla(const BlaModel& bla, int state_dim, int sk_iterations = 30);
/// As above, and reports the time-domain RMS error of the linear model on `rec`.
[[nodiscard]] LinearInit init_linear_from_bla(const BlaModel& bla, int state_dim, const SignalRecord& rec,
                                              int sk_iterations = 30);

enum class CostDomain { frequency, time };

enum class FitStatus { converged_cost, converged_gradient, max_iterations, damping_ceiling };

struct FitReport {
    std::vector<double> cost_history;  // accepted steps, starting with the initial cost
    double final_cost = 0.0;
    double final_rms = 0.0;                  // time-domain output error RMS on the training record
    std::vector<double> line_error;          // |Y(k) - Yhat(k)| per fitted line (frequency domain)
    int iterations = 0;
    FitStatus status = FitStatus::max_iterations;
};

struct PnlssFitOptions {
    CostDomain domain = CostDomain::frequency;
    /// Period-grid lines to fit (frequency domain). Empty: all lines 1..N/2-1. DC is excluded by
    /// default, so models with free constant terms (decoupled branches) are better refit in the
    /// time domain or with line 0 listed explicitly.
    std::vector<std::size_t> lines;
    /// Per-line weights W(k); the cost is sum |Y - Yhat|^2 / W(k). Empty: uniform.
    std::vector<double> weights;
    int max_iterations = 300;
    double cost_tolerance = 1e-9;
    double gradient_tolerance = 1e-8;
    bool estimate_x0 = true;
    bool freeze_nonlinear = false;
};

struct PnlssFit {
    PnlssModel model;
    FitReport report;
};

/// Levenberg-Marquardt on all parameters with analytic (state-sensitivity) Jacobians.
[[nodiscard]] PnlssFit fit_pnlss(const PnlssModel& init, const SignalRecord& rec, const PnlssFitOptions& options = {});

/// Residual vector and its Jacobian for the given model/record; exposed for gradient checks.
struct PnlssResidual {
    Eigen::VectorXd residual;
    Eigen::MatrixXd jacobian;  // d residual / d theta
    double cost = 0.0;         // residual.squaredNorm()
};
[[nodiscard]] Eigen::VectorXd pnlss_parameters(const PnlssModel& m);
[[nodiscard]] PnlssModel pnlss_with_parameters(const PnlssModel& m, const Eigen::Ref<const Eigen::VectorXd>& theta);
[[nodiscard]] PnlssResidual pnlss_residual(const PnlssModel& m, const SignalRecord& rec, const PnlssFitOptions& options,
                                           bool with_jacobian = true);

/// Swaps the polynomial state map E for a decoupled representation.
[[nodiscard]] PnlssModel with_decoupled_state_map(const PnlssModel& m, DecoupledFunction d);

/// Rows z = [x(t); u(t)] of a simulated trajectory, the domain on which E is evaluated.
[[nodiscard]] Eigen::MatrixXd state_input_samples(const PnlssModel& m, std::span<const double> u);

[[nodiscard]] const char* to_string(FitStatus s);

}  // namespace nlsid
