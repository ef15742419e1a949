#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlsid/signals.hpp"

namespace nlsid {

/// 100 (1 - ||y - yhat|| / ||y - mean(y)||). Throws ConfigError for constant y or bad lengths.
[[nodiscard]] double fit_metric(std::span<const double> y, std::span<const double> yhat);

/// Normalized correlation over lags 1..max_lag with the +-1.96/sqrt(N) band.
struct CorrelationTest {
    std::vector<double> values;
    double bound = 0.0;
    int exceedances = 0;
    int allowed = 0;  // largest exceedance count that still passes
    bool pass = true;
};

struct ResidualTests {
    CorrelationTest autocorr;   // residual vs itself
    CorrelationTest crosscorr;  // residual(t) vs input(t - lag)
    std::vector<std::string> notes;
};

/**
 * Whiteness and independence tests. A test passes when the number of lags outside the band
 * does not exceed the 95% quantile of Binomial(max_lag, 0.05), the count expected for white
 * residuals.
 */
[[nodiscard]] ResidualTests residual_tests(std::span<const double> residual, std::span<const double> input,
                                           int max_lag = 25);

/// Smallest k with P(Binomial(n, p) <= k) >= q.
[[nodiscard]] int binomial_quantile(int n, double p, double q);

struct CoverageReport {
    double fraction_inside = 1.0;
    double radius = 0.0;                 // training distance quantile
    std::vector<double> test_distances;  // squared Mahalanobis distances
    bool extrapolation_flag = false;
    bool regularized = false;
};

/// Rows are states. Distances are s^T C^-1 s about the training mean.
[[nodiscard]] CoverageReport domain_coverage(const Eigen::MatrixXd& train_states, const Eigen::MatrixXd& test_states,
                                             double radius_quantile = 0.99);

struct ValidationReport {
    double fit_percent = 0.0;
    double rms_error = 0.0;
    ResidualTests tests;
    std::optional<CoverageReport> coverage;
};

[[nodiscard]] ValidationReport validate_model(std::span<const double> y, std::span<const double> yhat,
                                              std::span<const double> input, int max_lag = 25,
                                              const Eigen::MatrixXd* train_states = nullptr,
                                              const Eigen::MatrixXd* test_states = nullptr);

/// What one fit contributes: the functional of its model and the noise-only std the fit predicts.
struct FitOutcome {
    std::vector<double> functional;
    std::vector<double> theory_std;
};

using ExcitationFactory = std::function<SignalRecord(std::uint64_t seed)>;
using VariabilityFit = std::function<FitOutcome(const SignalRecord&)>;

struct VariabilityReport {
    std::vector<std::vector<double>> realizations;  // functional per successful realization
    std::vector<double> empirical_std;
    std::vector<double> theory_std;  // mean over realizations of the predicted std
    std::vector<double> ratio;
    double median_ratio = 0.0;
    bool structural_error_flag = false;  // median ratio above 1.5
    int failures = 0;
    std::vector<std::string> warnings;
};

/// Fits M models on realizations seeded seed, seed+1, ... (in parallel) and compares the spread.
[[nodiscard]] VariabilityReport realization_variability(const VariabilityFit& fit, const ExcitationFactory& factory,
                                                        int M, std::uint64_t seed = 1);

}  // namespace nlsid
