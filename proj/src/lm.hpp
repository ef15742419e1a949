#pragma once

// Levenberg-Marquardt shared by the PNLSS and decoupling optimizers.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace nlsid::detail {

struct LmEvaluation {
    Eigen::VectorXd residual;
    Eigen::MatrixXd jacobian;  // only needed when requested
    double cost = std::numeric_limits<double>::infinity();  // residual.squaredNorm(); inf = rejected point
};

enum class LmStop { cost, gradient, max_iterations, damping_ceiling };

struct LmOptions {
    int max_iterations = 300;
    double cost_tolerance = 1e-9;
    double gradient_tolerance = 1e-8;
    double absolute_cost = 0.0;  // stop when the cost falls to this level
    double lambda_ceiling = 1e16;
};

struct LmResult {
    Eigen::VectorXd theta;
    LmEvaluation last;
    std::vector<double> cost_history;  // initial cost, then every accepted step
    int iterations = 0;
    LmStop stop = LmStop::max_iterations;
    bool ever_finite_trial = false;
};

/**
 * Minimizes ||r(theta)||^2. Columns of the Jacobian are scaled to unit norm, the damped
 * step is taken from an SVD of the scaled Jacobian, the initial damping is
 * 1e-3 * trace(Js^T Js) / p and the damping follows the multiplicative nu = 2 schedule.
 * Only accepted steps (strict cost decrease) move theta.
 */
inline LmResult levenberg_marquardt(const Eigen::VectorXd& theta0,
                                    const std::function<LmEvaluation(const Eigen::VectorXd&, bool)>& eval,
                                    const LmOptions& opt) {
    LmResult out;
    out.theta = theta0;
    LmEvaluation current = eval(theta0, true);
    out.cost_history.push_back(current.cost);
    const Eigen::Index np = theta0.size();
    if (!std::isfinite(current.cost) || np == 0) {
        out.last = std::move(current);
        out.stop = LmStop::cost;
        return out;
    }

    double lambda = -1.0, nu = 2.0;
    bool done = current.cost <= opt.absolute_cost;
    if (done) out.stop = LmStop::cost;
    while (!done && out.iterations < opt.max_iterations) {
        ++out.iterations;
        Eigen::MatrixXd js(current.jacobian.rows(), np);
        Eigen::VectorXd scale(np);
        for (Eigen::Index j = 0; j < np; ++j) {
            const double s = current.jacobian.col(j).norm();
            scale(j) = s > 0.0 ? s : 1.0;
            js.col(j) = current.jacobian.col(j) / scale(j);
        }
        const Eigen::VectorXd grad = js.transpose() * current.residual;
        if (grad.norm() <= opt.gradient_tolerance * current.residual.norm()) {
            out.stop = LmStop::gradient;
            break;
        }
        if (lambda < 0.0) lambda = 1e-3 * js.squaredNorm() / static_cast<double>(np);

        Eigen::BDCSVD<Eigen::MatrixXd> svd(js, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd sv = svd.singularValues();
        const Eigen::VectorXd utr = svd.matrixU().transpose() * current.residual;

        for (;;) {
            const Eigen::VectorXd filt = sv.cwiseQuotient((sv.array().square() + lambda).matrix());
            const Eigen::VectorXd step_s = -(svd.matrixV() * filt.cwiseProduct(utr));
            const Eigen::VectorXd trial = out.theta + step_s.cwiseQuotient(scale);
            LmEvaluation cand = eval(trial, true);
            if (std::isfinite(cand.cost)) out.ever_finite_trial = true;
            if (std::isfinite(cand.cost) && cand.cost < current.cost) {
                const double predicted = current.cost - (current.residual + js * step_s).squaredNorm();
                const double rho = predicted > 0.0 ? (current.cost - cand.cost) / predicted : 0.0;
                lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
                nu = 2.0;
                const double rel = (current.cost - cand.cost) / current.cost;
                out.theta = trial;
                current = std::move(cand);
                out.cost_history.push_back(current.cost);
                if (rel < opt.cost_tolerance || current.cost <= opt.absolute_cost) {
                    out.stop = LmStop::cost;
                    done = true;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if (!(lambda <= opt.lambda_ceiling)) {
                out.stop = LmStop::damping_ceiling;
                done = true;
                break;
            }
        }
    }
    out.last = std::move(current);
    return out;
}

}  // namespace nlsid::detail
