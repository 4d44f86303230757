#include "dagfss/calibration.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include <boost/math/distributions/chi_squared.hpp>

namespace dagfss {

namespace {

double real_part_checked(Complex v, const char* what) {
    if (std::abs(v.imag()) > 1e-9 * std::max(1.0, std::abs(v.real()))) {
        throw CalibrationError(std::string(what) + ": imaginary residue " + std::to_string(v.imag()) +
                               " (taps not closed under conjugation?)");
    }
    return v.real();
}

void check_rates(double lambda_slow, double lambda_fast) {
    if (!(lambda_slow > 0.0 && lambda_slow < 1.0 && lambda_fast > 0.0 && lambda_fast < 1.0)) {
        throw std::invalid_argument("learning rates must lie in (0, 1)");
    }
}

} // namespace

double eta_arma(const ArmaFilter& f, double sigma2) {
    Complex sum = 0.0;
    for (const Tap& t : f.taps) {
        sum += t.phi;
    }
    return f.c * sigma2 * (f.c + 2.0 * real_part_checked(sum, "eta_arma"));
}

double kappa(double mu, const ArmaFilter& f, double sigma2) {
    if (!(sigma2 >= 0.0)) {
        throw std::invalid_argument("kappa: sigma2 must be nonnegative");
    }
    Complex acc = 0.0;
    for (const Tap& a : f.taps) {
        for (const Tap& b : f.taps) {
            const Complex den = 1.0 - a.psi * std::conj(b.psi) * mu * mu;
            if (std::abs(den) < 1e-12) {
                throw CalibrationError("kappa: singular denominator at mu = " + std::to_string(mu));
            }
            acc += sigma2 * a.phi * std::conj(b.phi) / den;
        }
    }
    return real_part_checked(acc, "kappa") + eta_arma(f, sigma2);
}

Eigen::MatrixXd q_infinity(const LaplacianSpectrum& spec, const ArmaFilter& f, double sigma2) {
    const Eigen::MatrixXd& U = spec.eigenvectors;
    Eigen::VectorXd k(U.cols());
    for (Eigen::Index i = 0; i < k.size(); ++i) {
        k(i) = kappa(spec.eigenvalues(i), f, sigma2);
    }
    Eigen::MatrixXd q = U * k.asDiagonal() * U.transpose();
    return 0.5 * (q + q.transpose());
}

double eta_ewma(double lambda_slow, double lambda_fast) {
    check_rates(lambda_slow, lambda_fast);
    const double l = lambda_slow;
    const double L = lambda_fast;
    return l / (2.0 - l) + L / (2.0 - L) - 2.0 * l * L / (l + L - l * L);
}

Eigen::MatrixXd r_infinity(const Eigen::MatrixXd& q, double lambda_slow, double lambda_fast) {
    return eta_ewma(lambda_slow, lambda_fast) * q;
}

double ewma_difference_variance(double mu, const ArmaFilter& f, double sigma2, double lambda_slow,
                                double lambda_fast) {
    check_rates(lambda_slow, lambda_fast);
    // d = E(B) G(B) y with E the difference of the two smoothing kernels and G
    // the filter, both as sums of first-order terms r / (1 - p B).
    struct Term {
        Complex residue;
        Complex pole;
    };
    std::vector<Term> terms;
    for (const auto& [gain, decay] : {std::pair{lambda_fast, 1.0 - lambda_fast}, std::pair{-lambda_slow, 1.0 - lambda_slow}}) {
        terms.push_back({gain * f.c, decay});
        for (const Tap& t : f.taps) {
            const Complex q = t.psi * mu;
            const Complex gap = decay - q;
            if (std::abs(gap) < 1e-9) {
                throw CalibrationError("ewma_difference_variance: filter pole coincides with a smoothing pole");
            }
            terms.push_back({gain * t.phi * decay / gap, decay});
            terms.push_back({-gain * t.phi * q / gap, q});
        }
    }
    Complex acc = 0.0;
    for (const Term& a : terms) {
        for (const Term& b : terms) {
            acc += a.residue * std::conj(b.residue) / (1.0 - a.pole * std::conj(b.pole));
        }
    }
    return sigma2 * real_part_checked(acc, "ewma_difference_variance");
}

Eigen::MatrixXd r_colored(const LaplacianSpectrum& spec, const ArmaFilter& f, double sigma2, double lambda_slow,
                          double lambda_fast) {
    const Eigen::MatrixXd& U = spec.eigenvectors;
    Eigen::VectorXd k(U.cols());
    for (Eigen::Index i = 0; i < k.size(); ++i) {
        k(i) = ewma_difference_variance(spec.eigenvalues(i), f, sigma2, lambda_slow, lambda_fast);
    }
    Eigen::MatrixXd r = U * k.asDiagonal() * U.transpose();
    return 0.5 * (r + r.transpose());
}

double sigma_node(const Eigen::MatrixXd& r, const Graph& g, Vertex i) {
    if (static_cast<std::size_t>(r.rows()) != g.vertex_count() || r.rows() != r.cols()) {
        throw std::invalid_argument("sigma_node: covariance is " + std::to_string(r.rows()) + "x" +
                                    std::to_string(r.cols()) + ", graph has " +
                                    std::to_string(g.vertex_count()) + " vertices");
    }
    const auto hood = closed_neighborhood(g, i);
    double var = 0.0;
    for (Vertex k : hood) {
        for (Vertex l : hood) {
            var += r(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
        }
    }
    if (var < -1e-9) {
        throw CalibrationError("sigma_node: negative variance " + std::to_string(var) + " at vertex " +
                               std::to_string(i));
    }
    return std::sqrt(std::max(var, 0.0));
}

double erfc_inv(double y) {
    if (!(y > 0.0 && y < 2.0)) {
        throw std::domain_error("erfc_inv: argument " + std::to_string(y) + " outside (0, 2)");
    }
    if (y == 1.0) {
        return 0.0;
    }
    if (y > 1.0) {
        return -erfc_inv(2.0 - y);
    }
    // Winitzki's closed-form approximation as the starting point.
    const double a = 0.147;
    const double ln = std::log(y * (2.0 - y));
    const double head = 2.0 / (std::numbers::pi * a) + 0.5 * ln;
    double x = std::sqrt(std::sqrt(head * head - ln / a) - head);
    // Newton on erfc(x) - y.
    const double slope_scale = 2.0 / std::sqrt(std::numbers::pi);
    for (int it = 0; it < 50; ++it) {
        const double f = std::erfc(x) - y;
        const double df = -slope_scale * std::exp(-x * x);
        if (df == 0.0) {
            break;
        }
        const double step = f / df;
        x -= step;
        if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) {
            break;
        }
    }
    return x;
}

double bonferroni_threshold(double sigma, double alpha, std::size_t p) {
    if (p == 0) {
        throw std::invalid_argument("bonferroni_threshold: p must be positive");
    }
    const double level = alpha / static_cast<double>(p);
    if (!(level > 0.0 && level < 1.0)) {
        throw std::invalid_argument("bonferroni_threshold: alpha / p = " + std::to_string(level) +
                                    " outside (0, 1)");
    }
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("bonferroni_threshold: sigma must be positive, got " +
                                    std::to_string(sigma));
    }
    return std::numbers::sqrt2 * sigma * erfc_inv(level);
}

double QuadraticFormLaw::upper_quantile(double tail) const {
    if (!(tail > 0.0 && tail < 1.0)) {
        throw std::invalid_argument("upper_quantile: tail probability outside (0, 1)");
    }
    const boost::math::chi_squared dist(dof);
    return scale * boost::math::quantile(boost::math::complement(dist, tail));
}

QuadraticFormLaw quadratic_form_law(const Eigen::MatrixXd& s) {
    const double mean = s.trace();
    const double var = 2.0 * (s * s).trace();
    if (!(mean > 0.0 && var > 0.0)) {
        throw CalibrationError("quadratic_form_law: degenerate covariance");
    }
    return {var / (2.0 * mean), 2.0 * mean * mean / var};
}

CalibrationReport calibrate(const Graph& g, const LaplacianSpectrum& spec, const ArmaFilter& f,
                            double sigma2, double lambda_slow, double lambda_fast, double alpha,
                            Detector detector) {
    const std::size_t p = g.vertex_count();
    if (spec.size() != p) {
        throw std::invalid_argument("calibrate: spectrum has " + std::to_string(spec.size()) +
                                    " modes, graph has " + std::to_string(p) + " vertices");
    }
    if (!(alpha > 0.0 && alpha < static_cast<double>(p))) {
        throw std::invalid_argument("calibrate: alpha must lie in (0, p)");
    }
    CalibrationReport r;
    r.detector = detector;
    r.alpha = alpha;
    r.sigma2 = sigma2;
    r.lambda_slow = lambda_slow;
    r.lambda_fast = lambda_fast;
    r.eta_ewma = eta_ewma(lambda_slow, lambda_fast);
    r.q_inf = q_infinity(spec, f, sigma2);
    r.r_inf = r.eta_ewma * r.q_inf;

    const double level = alpha / static_cast<double>(p);
    const auto restricted = [&](Vertex i) {
        const auto hood = closed_neighborhood(g, i);
        Eigen::MatrixXd s(hood.size(), hood.size());
        for (std::size_t a = 0; a < hood.size(); ++a) {
            for (std::size_t b = 0; b < hood.size(); ++b) {
                s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    r.r_inf(static_cast<Eigen::Index>(hood[a]), static_cast<Eigen::Index>(hood[b]));
            }
        }
        return s;
    };
    switch (detector) {
    case Detector::CoherentSum:
        for (Vertex i = 0; i < p; ++i) {
            r.sigma.push_back(sigma_node(r.r_inf, g, i));
            r.xi.push_back(bonferroni_threshold(r.sigma.back(), alpha, p));
        }
        break;
    case Detector::Independent:
        for (Vertex i = 0; i < p; ++i) {
            const double v = r.r_inf(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
            r.sigma.push_back(std::sqrt(std::max(v, 0.0)));
            r.xi.push_back(bonferroni_threshold(r.sigma.back(), alpha, p));
        }
        break;
    case Detector::SquaredNorm:
        for (Vertex i = 0; i < p; ++i) {
            const Eigen::MatrixXd s = restricted(i);
            r.sigma.push_back(std::sqrt(s.trace()));
            r.xi.push_back(std::sqrt(quadratic_form_law(s).upper_quantile(level)));
        }
        break;
    case Detector::Centralized:
        r.sigma.push_back(std::sqrt(r.r_inf.trace()));
        r.xi.push_back(std::sqrt(quadratic_form_law(r.r_inf).upper_quantile(alpha)));
        break;
    }
    return r;
}

void to_json(nlohmann::json& j, const CalibrationReport& r) {
    j = nlohmann::json{{"detector", to_string(r.detector)},
                       {"alpha", r.alpha},
                       {"sigma2", r.sigma2},
                       {"lambda_slow", r.lambda_slow},
                       {"lambda_fast", r.lambda_fast},
                       {"eta_ewma", r.eta_ewma},
                       {"sigma", r.sigma},
                       {"xi", r.xi}};
}

void from_json(const nlohmann::json& j, CalibrationReport& r) {
    r.detector = parse_detector(j.value("detector", std::string("coherent")));
    j.at("alpha").get_to(r.alpha);
    r.sigma2 = j.value("sigma2", 0.0);
    r.lambda_slow = j.value("lambda_slow", 0.0);
    r.lambda_fast = j.value("lambda_fast", 0.0);
    j.at("eta_ewma").get_to(r.eta_ewma);
    j.at("sigma").get_to(r.sigma);
    j.at("xi").get_to(r.xi);
    for (double x : r.xi) {
        if (!(x > 0.0)) {
            throw std::invalid_argument("calibration: thresholds must be positive");
        }
    }
}

} // namespace dagfss
