#include <cmath>
#include <random>

#include "doctest.h"

#include "dagfss/arma.hpp"
#include "dagfss/gfss.hpp"

using namespace dagfss;

namespace {

std::vector<GridSample> sample_function(std::size_t n, double (*h)(double)) {
    std::vector<GridSample> s;
    for (std::size_t i = 1; i <= n; ++i) {
        const double x = 2.0 * static_cast<double>(i) / static_cast<double>(n + 1);
        s.push_back({x, h(x)});
    }
    return s;
}

bool conjugate_closed(const ArmaFilter& f) {
    std::vector<bool> used(f.taps.size(), false);
    for (std::size_t i = 0; i < f.taps.size(); ++i) {
        bool found = false;
        for (std::size_t j = 0; j < f.taps.size() && !found; ++j) {
            if (used[j]) continue;
            if (std::abs(f.taps[j].psi - std::conj(f.taps[i].psi)) < 1e-12 &&
                std::abs(f.taps[j].phi - std::conj(f.taps[i].phi)) < 1e-9 * (1.0 + std::abs(f.taps[i].phi))) {
                used[j] = true;
                found = true;
            }
        }
        if (!found) return false;
    }
    return true;
}

} // namespace

TEST_CASE("sample_target") {
    const auto s = sample_target(0.3, 3);
    REQUIRE(s.size() == 3);
    CHECK(s[0].x == doctest::Approx(0.5));
    CHECK(s[1].x == doctest::Approx(1.0));
    CHECK(s[2].x == doctest::Approx(1.5));
    CHECK(s[0].h == doctest::Approx(std::sqrt(0.6)));
    CHECK(s[1].h == doctest::Approx(std::sqrt(0.3)));
    CHECK(s[2].h == doctest::Approx(std::sqrt(0.2)));
    for (const auto& g : sample_target(2.0, 50)) CHECK(g.h == 1.0);
    CHECK_THROWS_AS(sample_target(0.3, 0), std::invalid_argument);
}

TEST_CASE("fit_rational exact recoveries") {
    SUBCASE("first-order rational target") {
        const auto s = sample_function(40, [](double x) { return 1.0 / (1.0 - 0.3 * x); });
        const RationalFit fit = fit_rational(s, 1, 0.1);
        CHECK(fit.poly.a[0] == doctest::Approx(-0.3).epsilon(1e-6));
        CHECK(std::abs(fit.poly.b[0] - 1.0) < 1e-6);
        CHECK(std::abs(fit.poly.b[1]) < 1e-6);
        CHECK(fit.loss < 1e-12);
    }
    SUBCASE("constant target") {
        const auto s = sample_function(40, [](double) { return 1.0; });
        const RationalFit fit = fit_rational(s, 1, 0.1);
        CHECK(fit.loss < 1e-12);
        for (const auto& g : s) CHECK(fit.poly.numerator(g.x) == doctest::Approx(fit.poly.denominator(g.x)));
    }
    SUBCASE("errors") {
        const auto s = sample_target(0.3, 4);
        CHECK_THROWS_AS(fit_rational(s, 2, 0.1), std::invalid_argument);
        CHECK_THROWS_AS(fit_rational(sample_target(0.3, 20), 2, 1.5), std::invalid_argument);
    }
}

TEST_CASE("fit_rational on the GFSS target") {
    const auto s = sample_target(0.3, 200);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t K : {1, 2, 4}) {
        const RationalFit fit = fit_rational(s, K, 0.1);
        for (const auto& g : s) CHECK(fit.poly.denominator(g.x) >= 0.1 - 1e-9);
        CHECK(fit.loss <= previous * (1.0 + 1e-9));
        previous = fit.loss;
    }
}

TEST_CASE("partial_fractions hand expansions") {
    SUBCASE("real pole with direct term") {
        const ArmaFilter f = partial_fractions({{-0.5}, {3.0, -0.5}});
        REQUIRE(f.taps.size() == 1);
        CHECK(f.c == doctest::Approx(1.0));
        CHECK(f.taps[0].psi.real() == doctest::Approx(0.5));
        CHECK(f.taps[0].phi.real() == doctest::Approx(2.0));
    }
    SUBCASE("no direct term") {
        const ArmaFilter f = partial_fractions({{-0.3}, {1.0, 0.0}});
        REQUIRE(f.taps.size() == 1);
        CHECK(std::abs(f.c) < 1e-12);
        CHECK(f.taps[0].psi.real() == doctest::Approx(0.3));
        CHECK(f.taps[0].phi.real() == doctest::Approx(1.0));
    }
    SUBCASE("complex pair") {
        const PolyPair pp{{-1.0, 0.5}, {1.0, 0.0, 0.0}};
        const ArmaFilter f = partial_fractions(pp);
        REQUIRE(f.taps.size() == 2);
        // 1 - x + x^2/2 = (1 - psi x)(1 - conj(psi) x) with psi + conj(psi) = 1 and |psi|^2 = 1/2.
        for (const Tap& t : f.taps) {
            CHECK(t.psi.real() == doctest::Approx(0.5));
            CHECK(std::abs(t.psi.imag()) == doctest::Approx(0.5));
        }
        CHECK(conjugate_closed(f));
        for (double x : {0.1, 0.7, 1.3, 1.9}) {
            CHECK(evaluate_response(f, x) == doctest::Approx(pp.numerator(x) / pp.denominator(x)).epsilon(1e-10));
        }
    }
    SUBCASE("confluent and zero roots") {
        // (1 - x)^2
        CHECK_THROWS_WITH_AS(partial_fractions({{-2.0, 1.0}, {1.0, 0.0, 0.0}}),
                             doctest::Contains("confluent"), DesignError);
    }
}

TEST_CASE("evaluate_response and check_stability") {
    ArmaFilter f;
    f.c = 1.0;
    f.taps = {{0.5, 2.0}};
    CHECK(evaluate_response(f, 1.0) == doctest::Approx(5.0));
    CHECK(evaluate_response(f, 0.0) == doctest::Approx(3.0));
    CHECK_THROWS_AS(evaluate_response(f, 2.0), std::domain_error);

    ArmaFilter g;
    g.taps = {{0.4, 1.0}};
    CHECK(check_stability(g, 2.0).margin == doctest::Approx(0.8));
    CHECK(check_stability(g, 2.0).stable);
    g.taps = {{0.6, 1.0}};
    CHECK(check_stability(g, 2.0).margin == doctest::Approx(1.2));
    CHECK_FALSE(check_stability(g, 2.0).stable);
}

TEST_CASE("round trip on random stable fits") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t K : {1, 2, 4, 8}) {
        for (int trial = 0; trial < 5; ++trial) {
            // Random poles outside (0, 2) in 1/psi, random residues.
            ArmaFilter f;
            f.c = unit(rng) - 0.5;
            for (std::size_t l = 0; l < K;) {
                const double r = 0.05 + 0.4 * unit(rng);
                if (K - l >= 2 && unit(rng) < 0.5) {
                    const Complex psi = std::polar(r, 0.3 + 2.5 * unit(rng));
                    const Complex phi(unit(rng) - 0.5, unit(rng) - 0.5);
                    f.taps.push_back({psi, phi});
                    f.taps.push_back({std::conj(psi), std::conj(phi)});
                    l += 2;
                } else {
                    f.taps.push_back({(unit(rng) < 0.5 ? -1.0 : 1.0) * r, unit(rng) - 0.5});
                    l += 1;
                }
            }
            const PolyPair pp = to_poly_pair(f);
            const ArmaFilter back = partial_fractions(pp);
            CHECK(back.taps.size() == K);
            CHECK(conjugate_closed(back));
            for (int k = 0; k < 32; ++k) {
                const double x = 2.0 * unit(rng);
                const double exact = pp.numerator(x) / pp.denominator(x);
                CHECK(std::abs(evaluate_response(back, x) - exact) <= 1e-8 * std::max(1.0, std::abs(exact)));
            }
        }
    }
}

TEST_CASE("design_gfss_arma") {
    SUBCASE("constant target") {
        const FilterDesign d = design_gfss_arma(2.0, 1, 0.1, 200, 1.5);
        for (const auto& g : sample_target(2.0, 200)) CHECK(std::abs(evaluate_response(d.filter, g.x) - 1.0) < 1e-6);
    }
    SUBCASE("K = 4 GFSS fit") {
        const double rho = 1.36;
        const FilterDesign d = design_gfss_arma(0.3, 4, 0.1, 200, rho);
        CHECK(d.stability.stable);
        CHECK(d.max_relative_error < 0.05);
        CHECK(conjugate_closed(d.filter));
        for (const auto& g : sample_target(0.3, 200)) {
            CHECK(std::abs(evaluate_response(d.filter, g.x) - d.poly.numerator(g.x) / d.poly.denominator(g.x)) < 1e-8);
        }
        nlohmann::json j = d;
        const FilterDesign back = j.get<FilterDesign>();
        REQUIRE(back.filter.taps.size() == d.filter.taps.size());
        CHECK(back.filter.c == d.filter.c);
        for (double mu : {0.0, 0.5, 1.3}) CHECK(evaluate_response(back.filter, mu) == evaluate_response(d.filter, mu));
    }
    SUBCASE("noise-gain bound") {
        DesignOptions o;
        o.max_noise_gain = 2.0;
        const FilterDesign d = design_gfss_arma(0.3, 4, 0.1, 200, 1.36, o);
        CHECK(d.stability.stable);
        CHECK(d.noise_gain <= 2.0 * 1.01);
        CHECK(max_noise_power_gain(d.filter, 1.36) == doctest::Approx(d.noise_gain));
    }
    SUBCASE("unstable raw fit is reported") {
        DesignOptions o;
        o.refine = false;
        CHECK_THROWS_AS(design_gfss_arma(0.3, 4, 0.1, 200, 1.36, o), StabilityError);
    }
}

TEST_CASE("noise_power_gain of simple filters") {
    ArmaFilter f;
    f.c = 0.0;
    f.taps = {{0.5, 1.0}};
    CHECK(noise_power_gain(f, 1.0) == doctest::Approx(1.0 / 0.75));
    ArmaFilter pass;
    pass.c = 1.0;
    CHECK(noise_power_gain(pass, 0.7) == doctest::Approx(1.0));
}
