#include "dagfss/gfss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dagfss {

void GfssConfig::validate() const {
    if (!(gamma > 0.0)) {
        throw std::invalid_argument("gamma must be positive");
    }
    if (!(sigma2 > 0.0)) {
        throw std::invalid_argument("sigma2 must be positive");
    }
    if (!(threshold > 0.0)) {
        throw std::invalid_argument("threshold must be positive");
    }
    if (!(0.0 < lambda_slow && lambda_slow < lambda_fast && lambda_fast < 1.0)) {
        throw std::invalid_argument("learning rates must satisfy 0 < lambda_slow < lambda_fast < 1");
    }
}

double h_star(double mu, double gamma) {
    if (!(mu >= 0.0)) {
        throw std::invalid_argument("h_star: negative frequency " + std::to_string(mu));
    }
    if (!(gamma > 0.0)) {
        throw std::invalid_argument("h_star: gamma must be positive");
    }
    if (mu == 0.0) {
        return 1.0;
    }
    return std::min(1.0, std::sqrt(gamma / mu));
}

Eigen::VectorXd gfss_filter(const Eigen::VectorXd& y, const LaplacianSpectrum& spec, double gamma,
                            ConstantMode mode) {
    const Eigen::MatrixXd& U = spec.eigenvectors;
    if (y.size() != U.rows()) {
        throw std::invalid_argument("gfss_filter: signal has dimension " + std::to_string(y.size()) +
                                    ", graph has " + std::to_string(U.rows()) + " vertices");
    }
    Eigen::VectorXd coeffs = U.transpose() * y;
    for (Eigen::Index k = 0; k < coeffs.size(); ++k) {
        // Rounding can leave the lowest eigenvalue slightly negative.
        coeffs(k) *= h_star(std::max(spec.eigenvalues(k), 0.0), gamma);
    }
    if (mode == ConstantMode::Excluded) {
        coeffs(0) = 0.0;
    }
    return U * coeffs;
}

double t_gfss(const Eigen::VectorXd& y, const LaplacianSpectrum& spec, double gamma,
              ConstantMode mode) {
    return gfss_filter(y, spec, gamma, mode).norm();
}

void ewma_step(EwmaPair& state, const Eigen::VectorXd& z, double lambda_slow, double lambda_fast) {
    if (z.size() != state.dimension()) {
        throw std::invalid_argument("ewma_step: input has dimension " + std::to_string(z.size()) +
                                    ", state has " + std::to_string(state.dimension()));
    }
    if (!(lambda_slow > 0.0 && lambda_slow < 1.0 && lambda_fast > 0.0 && lambda_fast < 1.0)) {
        throw std::invalid_argument("ewma_step: learning rates must lie in (0, 1)");
    }
    state.v = (1.0 - lambda_slow) * state.v + lambda_slow * z;
    state.v_fast = (1.0 - lambda_fast) * state.v_fast + lambda_fast * z;
    ++state.t;
}

double agfss_statistic(const EwmaPair& state) {
    return (state.v - state.v_fast).norm();
}

std::vector<AgfssRecord> run_agfss(std::span<const Eigen::VectorXd> stream,
                                   const LaplacianSpectrum& spec, const GfssConfig& config) {
    config.validate();
    EwmaPair state(static_cast<Eigen::Index>(spec.size()));
    std::vector<AgfssRecord> out;
    out.reserve(stream.size());
    for (std::size_t t = 0; t < stream.size(); ++t) {
        if (stream[t].size() != state.dimension()) {
            throw std::invalid_argument("run_agfss: tick " + std::to_string(t) + " has dimension " +
                                        std::to_string(stream[t].size()) + ", expected " +
                                        std::to_string(state.dimension()));
        }
        ewma_step(state, gfss_filter(stream[t], spec, config.gamma), config.lambda_slow,
                  config.lambda_fast);
        const double s = agfss_statistic(state);
        out.push_back({static_cast<long>(t), s, s > config.threshold});
    }
    return out;
}

} // namespace dagfss
