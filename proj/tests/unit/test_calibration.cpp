#include <cmath>
#include <random>

#include "doctest.h"

#include "../support/dense_oracle.hpp"
#include "dagfss/calibration.hpp"
#include "dagfss/distributed.hpp"
#include "dagfss/experiment.hpp"
#include "dagfss/rng.hpp"

using namespace dagfss;

namespace {

Graph star(std::size_t leaves) {
    std::vector<Edge> e;
    for (Vertex j = 1; j <= leaves; ++j) e.push_back({0, j, 1.0});
    return Graph(leaves + 1, e);
}

ArmaFilter single_tap(double psi, double phi, double c = 0.0) {
    ArmaFilter f;
    f.c = c;
    f.taps = {{psi, phi}};
    return f;
}

} // namespace

TEST_CASE("kappa reductions") {
    CHECK(kappa(0.7, single_tap(0.4, 1.5), 2.0) == doctest::Approx(2.0 * 2.25 / (1.0 - 0.16 * 0.49)));
    CHECK(kappa(0.0, single_tap(0.4, 1.5), 2.0) == doctest::Approx(2.0 * 2.25));
    CHECK(kappa(1.3, single_tap(0.4, 0.0, 1.0), 3.0) == doctest::Approx(3.0));
    CHECK(eta_arma(single_tap(0.4, 0.5, 2.0), 3.0) == doctest::Approx(2.0 * 3.0 * (2.0 + 1.0)));
    CHECK_THROWS_AS(kappa(2.0, single_tap(0.5, 1.0), 1.0), CalibrationError);
}

TEST_CASE("q_infinity closed forms") {
    const auto cg = generate_clustered_graph(20, 2, 0.6, 0.1, 1);
    const LaplacianSpectrum s = spectrum(normalized_laplacian(cg.graph));
    const Eigen::MatrixXd q = q_infinity(s, single_tap(0.0, 1.5), 2.0);
    CHECK((q - 4.5 * Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(q_infinity(s, single_tap(0.3, 1.0), 0.0).norm() == 0.0);
}

TEST_CASE("eta_ewma") {
    const double pinned = 0.0393080807222981;
    CHECK(eta_ewma(0.01, 0.1) == doctest::Approx(pinned).epsilon(1e-14));
    CHECK(eta_ewma(0.01, 0.1) == doctest::Approx(0.01 / 1.99 + 0.1 / 1.9 - 0.002 / 0.109).epsilon(1e-14));
    CHECK(std::abs(eta_ewma(0.1, 0.1)) < 1e-15);
    CHECK(eta_ewma(0.03, 0.2) == doctest::Approx(eta_ewma(0.2, 0.03)));
    CHECK_THROWS_AS(eta_ewma(0.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(eta_ewma(0.1, 1.0), std::invalid_argument);
}

TEST_CASE("r_infinity") {
    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(4, 4);
    CHECK(r_infinity(q, 0.1, 0.1).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((r_infinity(q, 0.01, 0.1) - 0.0393080807222981 * q).cwiseAbs().maxCoeff() < 1e-14);

    // Shared eigenvectors with a constant eigenvalue ratio.
    const auto cg = generate_clustered_graph(25, 3, 0.5, 0.1, 2);
    const LaplacianSpectrum s = spectrum(normalized_laplacian(cg.graph));
    const FilterDesign d = design_gfss_arma(0.3, 2, 0.1, 200, s.spectral_radius);
    const Eigen::MatrixXd qi = q_infinity(s, d.filter, 7.0);
    const Eigen::MatrixXd ri = r_infinity(qi, 0.01, 0.1);
    const Eigen::VectorXd ratio = (s.eigenvectors.transpose() * ri * s.eigenvectors).diagonal().cwiseQuotient(
        (s.eigenvectors.transpose() * qi * s.eigenvectors).diagonal());
    CHECK((ratio.array() - eta_ewma(0.01, 0.1)).abs().maxCoeff() < 1e-9);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qi);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
    CHECK((qi - qi.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ewma_difference_variance") {
    // Memoryless filter: white output, exact formula equals eta_ewma * kappa.
    const ArmaFilter gain = single_tap(0.0, 0.0, 1.3);
    CHECK(ewma_difference_variance(0.8, gain, 2.0, 0.01, 0.1) ==
          doctest::Approx(eta_ewma(0.01, 0.1) * kappa(0.8, gain, 2.0)).epsilon(1e-12));

    // AR(1) scalar oracle by brute-force impulse-response summation.
    const ArmaFilter ar = single_tap(0.6, 1.0);
    const double mu = 0.9;
    const double a = 0.6 * mu;
    const double ls = 0.05;
    const double lf = 0.3;
    std::vector<double> z_imp(4000);
    for (std::size_t k = 0; k < z_imp.size(); ++k) z_imp[k] = std::pow(a, static_cast<double>(k));
    double var = 0.0;
    for (std::size_t k = 0; k < z_imp.size(); ++k) {
        double h = 0.0;
        for (std::size_t j = 0; j <= k; ++j) {
            const auto lag = static_cast<double>(k - j);
            h += (lf * std::pow(1.0 - lf, lag) - ls * std::pow(1.0 - ls, lag)) * z_imp[j];
        }
        var += h * h;
    }
    CHECK(ewma_difference_variance(mu, ar, 1.0, ls, lf) == doctest::Approx(var).epsilon(1e-8));
}

TEST_CASE("sigma_node") {
    const Graph s = star(3);
    CHECK(sigma_node(Eigen::MatrixXd::Identity(4, 4), s, 0) == doctest::Approx(2.0));
    CHECK(sigma_node(0.25 * Eigen::MatrixXd::Identity(4, 4), s, 1) == doctest::Approx(std::sqrt(2 * 0.25)));
    CHECK(sigma_node(Eigen::MatrixXd::Zero(4, 4), s, 0) == 0.0);
    Eigen::MatrixXd full = Eigen::MatrixXd::Constant(4, 4, 0.5);
    full.diagonal().setOnes();
    // Closed neighborhood of a leaf is {0, leaf}: 1 + 1 + 2 * 0.5.
    CHECK(sigma_node(full, s, 2) == doctest::Approx(std::sqrt(3.0)));
    CHECK_THROWS_AS(sigma_node(-Eigen::MatrixXd::Identity(4, 4), s, 0), CalibrationError);
}

TEST_CASE("erfc_inv") {
    CHECK(erfc_inv(1.0) == 0.0);
    CHECK(erfc_inv(0.5) == doctest::Approx(oracle::erfc_inv_bisect(0.5)).epsilon(1e-12));
    CHECK(erfc_inv(0.5) == doctest::Approx(0.476936276204469878).epsilon(1e-14));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(1e-6, 2.0 - 1e-6);
    for (int k = 0; k < 100; ++k) {
        const double y = u(rng);
        CHECK(std::abs(std::erfc(erfc_inv(y)) - y) <= 1e-10 * y);
    }
    for (double y : {1e-300, 1e-50, 1e-12, 2.0 - 1e-12}) {
        CHECK(std::erfc(erfc_inv(y)) == doctest::Approx(y).epsilon(1e-9));
    }
    CHECK_THROWS_AS(erfc_inv(0.0), std::domain_error);
    CHECK_THROWS_AS(erfc_inv(2.0), std::domain_error);
}

TEST_CASE("bonferroni_threshold") {
    CHECK(bonferroni_threshold(1.0, 0.5, 1) == doctest::Approx(0.6744897501960817).epsilon(1e-12));
    CHECK(bonferroni_threshold(2.0, 0.05, 250) == doctest::Approx(2.0 * bonferroni_threshold(1.0, 0.05, 250)));
    CHECK(bonferroni_threshold(1.0, 0.05, 250) == doctest::Approx(std::sqrt(2.0) * oracle::erfc_inv_bisect(0.0002)));
    CHECK_THROWS(bonferroni_threshold(1.0, 2.0, 2));
    CHECK_THROWS(bonferroni_threshold(0.0, 0.05, 10));
}

TEST_CASE("quadratic form law") {
    // Identity covariance: exactly chi-square with p degrees of freedom.
    const QuadraticFormLaw law = quadratic_form_law(Eigen::MatrixXd::Identity(5, 5));
    CHECK(law.scale == doctest::Approx(1.0));
    CHECK(law.dof == doctest::Approx(5.0));
    CHECK(law.upper_quantile(0.05) == doctest::Approx(11.070497693516351).epsilon(1e-10));
}

TEST_CASE("calibrate thresholds and JSON") {
    const auto cg = generate_clustered_graph(30, 3, 0.5, 0.08, 3);
    const LaplacianSpectrum s = spectrum(normalized_laplacian(cg.graph));
    const FilterDesign d = design_gfss_arma(0.3, 2, 0.1, 200, s.spectral_radius);
    for (Detector det : all_detectors) {
        const CalibrationReport r = calibrate(cg.graph, s, d.filter, 7.0, 0.01, 0.1, 0.05, det);
        CHECK(r.xi.size() == (det == Detector::Centralized ? 1u : 30u));
        for (double xi : r.xi) CHECK(xi > 0.0);
        CHECK(r.eta_ewma == doctest::Approx(0.0393080807222981));
        if (det == Detector::CoherentSum) {
            for (Vertex i = 0; i < 30; ++i) {
                const auto nb = closed_neighborhood(cg.graph, i);
                double var = 0.0;
                for (Vertex k : nb)
                    for (Vertex l : nb) var += r.r_inf(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
                CHECK(r.sigma[i] == doctest::Approx(std::sqrt(var)));
                CHECK(r.xi[i] == doctest::Approx(std::sqrt(2.0) * std::sqrt(var) * oracle::erfc_inv_bisect(0.05 / 30)));
            }
        }
        nlohmann::json j = r;
        const CalibrationReport back = j.get<CalibrationReport>();
        CHECK(back.detector == det);
        CHECK(back.xi == r.xi);
        CHECK(back.sigma == r.sigma);
    }
}
