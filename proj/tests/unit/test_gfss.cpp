#include <cmath>
#include <random>

#include "doctest.h"

#include "dagfss/experiment.hpp"
#include "dagfss/gfss.hpp"
#include "dagfss/rng.hpp"

using namespace dagfss;

namespace {

LaplacianSpectrum two_vertex() {
    const std::vector<Edge> e{{0, 1, 1.0}};
    return spectrum(normalized_laplacian(build_graph(e)));
}

Eigen::VectorXd random_vector(Eigen::Index p, std::uint64_t stream) {
    CounterRng rng(77, stream);
    Eigen::VectorXd v(p);
    for (Eigen::Index i = 0; i < p; ++i) v(i) = rng.gaussian();
    return v;
}

} // namespace

TEST_CASE("h_star values") {
    CHECK(h_star(0.3, 0.3) == doctest::Approx(1.0));
    CHECK(h_star(1.2, 0.3) == doctest::Approx(0.5));
    CHECK(h_star(0.0, 0.3) == 1.0);
    CHECK(h_star(0.1, 0.3) == 1.0);
    CHECK(h_star(2.0, 0.3) == doctest::Approx(std::sqrt(0.15)));
    CHECK_THROWS_AS(h_star(-0.1, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(h_star(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("gfss_filter on two vertices") {
    const LaplacianSpectrum s = two_vertex();
    const Eigen::VectorXd g1 = gfss_filter(Eigen::Vector2d(1.0, 1.0), s, 0.3);
    CHECK(g1(0) == doctest::Approx(1.0));
    CHECK(g1(1) == doctest::Approx(1.0));

    // u_1 = (1, 1)/sqrt2 at gain 1, u_2 = (1, -1)/sqrt2 at gain sqrt(0.15).
    const double h2 = std::sqrt(0.15);
    const Eigen::VectorXd g2 = gfss_filter(Eigen::Vector2d(1.0, 0.0), s, 0.3);
    CHECK(g2(0) == doctest::Approx(0.5 + 0.5 * h2));
    CHECK(g2(1) == doctest::Approx(0.5 - 0.5 * h2));
    CHECK(g2(0) == doctest::Approx(0.69365).epsilon(1e-5));
    CHECK(g2(1) == doctest::Approx(0.30635).epsilon(1e-4));

    CHECK(gfss_filter(Eigen::Vector2d::Zero(), s, 0.3).norm() == 0.0);
    CHECK_THROWS_AS(gfss_filter(Eigen::Vector3d::Ones(), s, 0.3), std::invalid_argument);

    // Dropping the constant mode leaves only the u_2 component.
    const Eigen::VectorXd g3 = gfss_filter(Eigen::Vector2d(1.0, 0.0), s, 0.3, ConstantMode::Excluded);
    CHECK(g3(0) == doctest::Approx(0.5 * h2));
    CHECK(g3(1) == doctest::Approx(-0.5 * h2));
}

TEST_CASE("t_gfss") {
    const LaplacianSpectrum s = two_vertex();
    const Eigen::Vector2d y(1.0, 0.0);
    CHECK(t_gfss(Eigen::Vector2d::Zero(), s, 0.3) == 0.0);
    CHECK(t_gfss(y, s, 0.3) == doctest::Approx(0.75829).epsilon(1e-5));
    CHECK(t_gfss(2.0 * y, s, 0.3) == doctest::Approx(2.0 * t_gfss(y, s, 0.3)));
}

TEST_CASE("gfss_filter is linear and contracting") {
    const auto cg = generate_clustered_graph(40, 4, 0.5, 0.05, 8);
    const LaplacianSpectrum s = spectrum(normalized_laplacian(cg.graph));
    const Eigen::VectorXd a = random_vector(40, 1);
    const Eigen::VectorXd b = random_vector(40, 2);
    const Eigen::VectorXd lhs = gfss_filter(1.7 * a - 0.4 * b, s, 0.3);
    const Eigen::VectorXd rhs = 1.7 * gfss_filter(a, s, 0.3) - 0.4 * gfss_filter(b, s, 0.3);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(gfss_filter(a, s, 0.3).norm() <= a.norm() + 1e-12);
}

TEST_CASE("ewma_step examples") {
    SUBCASE("constant input follows the geometric series") {
        EwmaPair e(1);
        for (int t = 0; t < 300; ++t) {
            ewma_step(e, Eigen::VectorXd::Ones(1), 0.01, 0.1);
            CHECK(e.t == t);
            CHECK(e.v(0) == doctest::Approx(1.0 - std::pow(0.99, t + 1)).epsilon(1e-12));
            CHECK(e.v_fast(0) == doctest::Approx(1.0 - std::pow(0.9, t + 1)).epsilon(1e-12));
        }
    }
    SUBCASE("equal rates give equal averages") {
        EwmaPair e(3);
        for (int t = 0; t < 50; ++t) {
            ewma_step(e, random_vector(3, 10 + static_cast<std::uint64_t>(t)), 0.2, 0.2);
            CHECK(e.v == e.v_fast);
        }
    }
    SUBCASE("zero input keeps zero state") {
        EwmaPair e(4);
        for (int t = 0; t < 20; ++t) ewma_step(e, Eigen::VectorXd::Zero(4), 0.01, 0.1);
        CHECK(e.v.norm() == 0.0);
        CHECK(e.v_fast.norm() == 0.0);
    }
    SUBCASE("errors") {
        EwmaPair e(2);
        CHECK_THROWS_AS(ewma_step(e, Eigen::VectorXd::Zero(3), 0.01, 0.1), std::invalid_argument);
        CHECK_THROWS_AS(ewma_step(e, Eigen::VectorXd::Zero(2), 0.0, 0.1), std::invalid_argument);
        CHECK_THROWS_AS(ewma_step(e, Eigen::VectorXd::Zero(2), 0.01, 1.0), std::invalid_argument);
    }
}

TEST_CASE("ewma direct sum and steady-state variance") {
    const double lambda = 0.05;
    EwmaPair e(1);
    std::vector<double> z;
    for (int t = 0; t < 400; ++t) {
        z.push_back(gaussian_at(3, 0, static_cast<std::uint64_t>(t)));
        ewma_step(e, Eigen::VectorXd::Constant(1, z.back()), lambda, 0.5);
        double direct = 0.0;
        for (int k = 0; k <= t; ++k) direct += lambda * std::pow(1.0 - lambda, t - k) * z[static_cast<std::size_t>(k)];
        CHECK(std::abs(e.v(0) - direct) < 1e-10);
    }

    // Exact stationary variance of an EWMA of unit white noise: l / (2 - l).
    const Eigen::Index chains = 4000;
    EwmaPair many(chains);
    for (int t = 0; t < 300; ++t) {
        Eigen::VectorXd zt(chains);
        for (Eigen::Index c = 0; c < chains; ++c) zt(c) = gaussian_at(4, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(t));
        ewma_step(many, zt, 0.1, 0.5);
    }
    const double var = many.v.squaredNorm() / static_cast<double>(chains);
    const double expected = 0.1 / 1.9;
    // sd of a chi-square sample variance: expected * sqrt(2 / chains)
    CHECK(std::abs(var - expected) < 4.0 * expected * std::sqrt(2.0 / chains));
}

TEST_CASE("agfss_statistic") {
    EwmaPair e(2);
    CHECK(agfss_statistic(e) == 0.0);
    e.v = Eigen::Vector2d(3.0, 0.0);
    e.v_fast = Eigen::Vector2d(0.0, 4.0);
    CHECK(agfss_statistic(e) == doctest::Approx(5.0));
}

TEST_CASE("agfss flag rate under noise matches the quantile") {
    const auto cg = generate_clustered_graph(20, 2, 0.6, 0.1, 4);
    const LaplacianSpectrum s = spectrum(normalized_laplacian(cg.graph));
    const std::vector<int> labels(20, 0);
    const auto stream = synthesize_signal(labels, 1.0, {100000, 0.0, 0}, 20000, 12, 0);
    GfssConfig cfg;
    cfg.threshold = 1e9;
    const auto rec = run_agfss(stream, s, cfg);
    std::vector<double> tail;
    for (std::size_t t = 500; t < rec.size(); ++t) tail.push_back(rec[t].statistic);
    std::vector<double> sorted = tail;
    std::sort(sorted.begin(), sorted.end());
    const double q90 = sorted[static_cast<std::size_t>(0.9 * static_cast<double>(sorted.size()))];
    cfg.threshold = q90;
    const auto flagged = run_agfss(stream, s, cfg);
    std::size_t flags = 0;
    for (std::size_t t = 500; t < flagged.size(); ++t) flags += flagged[t].flag ? 1 : 0;
    CHECK(static_cast<double>(flags) / static_cast<double>(tail.size()) == doctest::Approx(0.1).epsilon(0.02));
}

TEST_CASE("run_agfss") {
    const auto cg = generate_clustered_graph(24, 3, 0.6, 0.1, 6);
    const LaplacianSpectrum s = spectrum(normalized_laplacian(cg.graph));
    GfssConfig cfg;

    SUBCASE("zero stream") {
        const std::vector<Eigen::VectorXd> zeros(30, Eigen::VectorXd::Zero(24));
        for (const auto& r : run_agfss(zeros, s, cfg)) {
            CHECK(r.statistic == 0.0);
            CHECK_FALSE(r.flag);
        }
    }
    SUBCASE("filtering commutes with averaging") {
        const auto y = synthesize_signal(cg.labels, 2.0, {50, 1.0, 1}, 120, 5, 0);
        EwmaPair raw(24);
        EwmaPair filtered(24);
        for (const auto& yt : y) {
            ewma_step(raw, yt, cfg.lambda_slow, cfg.lambda_fast);
            ewma_step(filtered, gfss_filter(yt, s, cfg.gamma), cfg.lambda_slow, cfg.lambda_fast);
            CHECK((gfss_filter(raw.v, s, cfg.gamma) - filtered.v).cwiseAbs().maxCoeff() < 1e-10);
            CHECK((gfss_filter(raw.v_fast, s, cfg.gamma) - filtered.v_fast).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
    SUBCASE("statistic rises after a change") {
        const auto y = synthesize_signal(cg.labels, 1.0, {300, 2.0, 0}, 400, 9, 0);
        const auto rec = run_agfss(y, s, cfg);
        double before = 0.0;
        double after = 0.0;
        for (int t = 250; t < 300; ++t) before = std::max(before, rec[static_cast<std::size_t>(t)].statistic);
        for (int t = 320; t < 400; ++t) after = std::max(after, rec[static_cast<std::size_t>(t)].statistic);
        CHECK(after > 2.0 * before);
    }
    SUBCASE("dimension error names the tick") {
        std::vector<Eigen::VectorXd> y(5, Eigen::VectorXd::Zero(24));
        y[3] = Eigen::VectorXd::Zero(23);
        CHECK_THROWS_WITH_AS(run_agfss(y, s, cfg), doctest::Contains("tick 3"), std::invalid_argument);
    }
    SUBCASE("config validation") {
        GfssConfig bad;
        bad.lambda_slow = 0.2;
        bad.lambda_fast = 0.1;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}
