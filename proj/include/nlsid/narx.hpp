#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nlsid/polybasis.hpp"
#include "nlsid/signals.hpp"

namespace nlsid {

/**
 * @brief Polynomial NARX model  y(t) = h(phi(t)),
 *        phi(t) = [y(t-1..t-na), u(t or t-1 .. t-nb)].
 *
 * With `direct_term` the input block starts at u(t), giving nb + 1 input regressors.
 */
struct NarxModel {
    int na = 0;
    int nb = 0;
    bool direct_term = true;
    PolyMap map;  // single output over the regressor vector
    std::vector<std::string> regressor_layout;
    double training_rms = 0.0;  // equation-error RMS at fit time
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t max_lag() const { return static_cast<std::size_t>(std::max(na, nb)); }
    [[nodiscard]] std::size_t num_regressors() const {
        return static_cast<std::size_t>(na + nb + (direct_term ? 1 : 0));
    }
};

struct NarxOptions {
    int na = 2;
    int nb = 2;
    int degree = 3;
    bool direct_term = true;
    bool include_constant = true;
};

/// A model output sequence; entries before `first_valid` are NaN.
struct Trajectory {
    std::vector<double> values;
    std::size_t first_valid = 0;
};

enum class SimStatus { ok, diverged };

struct FreeRunResult {
    std::vector<double> output;  // truncated at the divergence index when diverged
    SimStatus status = SimStatus::ok;
    std::size_t divergence_index = 0;
};

/// Equation-error least squares (linear in the coefficients).
[[nodiscard]] NarxModel fit_narx(const SignalRecord& rec, const NarxOptions& options);

[[nodiscard]] std::vector<std::string> narx_regressor_layout(int na, int nb, bool direct_term);

/// Equation-error cost (1/N) sum e^2 of a model on a record.
[[nodiscard]] double narx_equation_cost(const NarxModel& m, const SignalRecord& rec);

[[nodiscard]] Trajectory predict_one_step(const NarxModel& m, const SignalRecord& rec);

/// Recursive simulation started from the first `na` outputs in `y_init`; inputs before t = 0 are zero.
[[nodiscard]] FreeRunResult simulate_free_run(const NarxModel& m, std::span<const double> u,
                                              std::span<const double> y_init);

}  // namespace nlsid
