#ifndef DAGFSS_GFSS_HPP
#define DAGFSS_GFSS_HPP

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dagfss/graph.hpp"

namespace dagfss {

/// Parameters of the centralized adaptive detector.
struct GfssConfig {
    double gamma = 0.3;
    double sigma2 = 1.0;
    double lambda_slow = 0.01;
    double lambda_fast = 0.1;
    double threshold = 1.0;

    /// Throws std::invalid_argument unless 0 < lambda_slow < lambda_fast < 1
    /// and gamma, sigma2, threshold are positive.
    void validate() const;
};

/// How the zero-frequency mode is treated by the spectral filter.
enum class ConstantMode {
    Relaxed,  ///< h*(0) = 1, the lowest mode passes unchanged.
    Excluded, ///< first mode dropped from the sum (original scan statistic).
};

/// GFSS low-pass gain min{1, sqrt(gamma / mu)}, with h*(0) = 1.
double h_star(double mu, double gamma);

Eigen::VectorXd gfss_filter(const Eigen::VectorXd& y, const LaplacianSpectrum& spec, double gamma,
                            ConstantMode mode = ConstantMode::Relaxed);

double t_gfss(const Eigen::VectorXd& y, const LaplacianSpectrum& spec, double gamma,
              ConstantMode mode = ConstantMode::Relaxed);

/// Slow and fast exponentially weighted averages, both started from zero.
struct EwmaPair {
    Eigen::VectorXd v;
    Eigen::VectorXd v_fast;
    long t = -1;

    explicit EwmaPair(Eigen::Index p)
        : v(Eigen::VectorXd::Zero(p)), v_fast(Eigen::VectorXd::Zero(p)) {}

    Eigen::Index dimension() const noexcept { return v.size(); }
};

/// One tick of both averages. Each average is recursed on its own previous
/// value: v_t = (1 - l) v_{t-1} + l z_t, v'_t = (1 - L) v'_{t-1} + L z_t.
void ewma_step(EwmaPair& state, const Eigen::VectorXd& z, double lambda_slow, double lambda_fast);

/// ||v_t - v'_t||_2
double agfss_statistic(const EwmaPair& state);

struct AgfssRecord {
    long t;
    double statistic;
    bool flag;
};

/// Filters each y_t, updates the averages and flags ticks with statistic > threshold.
std::vector<AgfssRecord> run_agfss(std::span<const Eigen::VectorXd> stream,
                                   const LaplacianSpectrum& spec, const GfssConfig& config);

} // namespace dagfss

#endif // DAGFSS_GFSS_HPP
