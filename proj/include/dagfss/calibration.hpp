#ifndef DAGFSS_CALIBRATION_HPP
#define DAGFSS_CALIBRATION_HPP

#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "dagfss/arma.hpp"
#include "dagfss/detector.hpp"
#include "dagfss/graph.hpp"
#include "json.hpp"

namespace dagfss {

class CalibrationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Direct-path constant c sigma^2 (c + 2 sum_l phi_l).
double eta_arma(const ArmaFilter& f, double sigma2);

/// Steady-state variance of the filtered white noise along an eigenvector with
/// eigenvalue mu.
double kappa(double mu, const ArmaFilter& f, double sigma2);

/// Q_inf = sum_i kappa(mu_i) u_i u_i^T
Eigen::MatrixXd q_infinity(const LaplacianSpectrum& spec, const ArmaFilter& f, double sigma2);

/// Scale factor between the covariance of d_t and that of z_t.
double eta_ewma(double lambda_slow, double lambda_fast);

Eigen::MatrixXd r_infinity(const Eigen::MatrixXd& q, double lambda_slow, double lambda_fast);

/// Exact steady-state variance of d_t along a mode with eigenvalue mu, taking
/// the temporal correlation of the filter output into account. Equals
/// eta_ewma * kappa only for a memoryless filter.
double ewma_difference_variance(double mu, const ArmaFilter& f, double sigma2, double lambda_slow,
                                double lambda_fast);

Eigen::MatrixXd r_colored(const LaplacianSpectrum& spec, const ArmaFilter& f, double sigma2, double lambda_slow,
                          double lambda_fast);

/// Standard deviation of the coherent sum at vertex i: the square root of the
/// sum of r(k, l) over ordered pairs (k, l) from the closed neighborhood.
double sigma_node(const Eigen::MatrixXd& r, const Graph& g, Vertex i);

/// Inverse of the complementary error function on (0, 2).
double erfc_inv(double y);

/// sqrt(2) sigma erfc^{-1}(alpha / p): two-sided Gaussian level alpha / p.
double bonferroni_threshold(double sigma, double alpha, std::size_t p);

/// Scaled chi-square fit (Satterthwaite) to a Gaussian quadratic form x^T x
/// with x ~ N(0, S): matches mean tr(S) and variance 2 tr(S^2).
struct QuadraticFormLaw {
    double scale = 0.0;
    double dof = 0.0;

    /// Upper quantile at tail probability `tail`.
    double upper_quantile(double tail) const;
};

QuadraticFormLaw quadratic_form_law(const Eigen::MatrixXd& s);

struct CalibrationReport {
    Detector detector = Detector::CoherentSum;
    double alpha = 0.0;
    double sigma2 = 0.0;
    double lambda_slow = 0.0;
    double lambda_fast = 0.0;
    double eta_ewma = 0.0;
    Eigen::MatrixXd q_inf;
    Eigen::MatrixXd r_inf;
    /// Per-vertex standard deviation of the statistic (coherent sum and
    /// independent detectors; for the norm detectors, sqrt of the mean).
    std::vector<double> sigma;
    /// Per-vertex thresholds; the centralized detector has a single entry.
    std::vector<double> xi;
};

/// Closed-form covariances and per-vertex thresholds for `detector` at global
/// type-1 error alpha, Bonferroni-corrected over the p vertices.
CalibrationReport calibrate(const Graph& g, const LaplacianSpectrum& spec, const ArmaFilter& f,
                            double sigma2, double lambda_slow, double lambda_fast, double alpha,
                            Detector detector = Detector::CoherentSum);

/// {detector, alpha, sigma2, lambda_slow, lambda_fast, eta_ewma, sigma, xi}; the
/// matrices are not exported.
void to_json(nlohmann::json& j, const CalibrationReport& r);
void from_json(const nlohmann::json& j, CalibrationReport& r);

} // namespace dagfss

#endif // DAGFSS_CALIBRATION_HPP
