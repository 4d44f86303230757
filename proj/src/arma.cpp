#include "dagfss/arma.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "dagfss/gfss.hpp"

namespace dagfss {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double PolyPair::denominator(double x) const {
    double acc = 0.0;
    for (auto it = a.rbegin(); it != a.rend(); ++it) {
        acc = (acc + *it) * x;
    }
    return 1.0 + acc;
}

double PolyPair::numerator(double x) const {
    double acc = 0.0;
    for (auto it = b.rbegin(); it != b.rend(); ++it) {
        acc = acc * x + *it;
    }
    return acc;
}

Complex PolyPair::denominator(Complex x) const {
    Complex acc = 0.0;
    for (auto it = a.rbegin(); it != a.rend(); ++it) {
        acc = (acc + *it) * x;
    }
    return 1.0 + acc;
}

Complex PolyPair::numerator(Complex x) const {
    Complex acc = 0.0;
    for (auto it = b.rbegin(); it != b.rend(); ++it) {
        acc = acc * x + *it;
    }
    return acc;
}

double ArmaFilter::max_pole_modulus() const {
    double m = 0.0;
    for (const Tap& t : taps) {
        m = std::max(m, std::abs(t.psi));
    }
    return m;
}

std::vector<GridSample> sample_target(double gamma, std::size_t n_grid) {
    if (n_grid == 0) {
        throw std::invalid_argument("sample_target: n_grid must be positive");
    }
    std::vector<GridSample> out(n_grid);
    for (std::size_t i = 1; i <= n_grid; ++i) {
        const double x = 2.0 * static_cast<double>(i) / static_cast<double>(n_grid + 1);
        out[i - 1] = {x, h_star(x, gamma)};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Constrained least squares

namespace {

MatrixXd null_space(const MatrixXd& C) {
    const Index n = C.cols();
    if (C.rows() == 0) {
        return MatrixXd::Identity(n, n);
    }
    Eigen::JacobiSVD<MatrixXd> svd(C, Eigen::ComputeFullV);
    const double tol = std::max<double>(C.rows(), n) * svd.singularValues()(0) *
                       std::numeric_limits<double>::epsilon();
    Index rank = 0;
    for (Index k = 0; k < svd.singularValues().size(); ++k) {
        rank += svd.singularValues()(k) > tol ? 1 : 0;
    }
    return svd.matrixV().rightCols(n - rank);
}

VectorXd min_norm_solve(const MatrixXd& A, const VectorXd& rhs) {
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(A);
    cod.setThreshold(1e-13);
    return cod.solve(rhs);
}

} // namespace

RationalFit fit_rational(std::span<const GridSample> samples, std::size_t K, double beta) {
    const std::size_t n = samples.size();
    if (K == 0) {
        throw std::invalid_argument("fit_rational: K must be at least 1");
    }
    if (n < 2 * K + 1) {
        throw std::invalid_argument("fit_rational: need at least 2K+1 = " + std::to_string(2 * K + 1) +
                                    " samples, got " + std::to_string(n));
    }
    if (!(beta > 0.0 && beta < 1.0)) {
        throw std::invalid_argument("fit_rational: beta must lie in (0, 1)");
    }
    const auto nb = static_cast<Index>(K + 1);
    const auto na = static_cast<Index>(K);
    const Index nv = nb + na;

    // theta = (b_0..b_K, a_1..a_K); residual_i = B(x_i) - h_i A(x_i) = M_i theta - h_i.
    // Columns are built in x / scale so that the monomials stay within [0, 1].
    double scale = 0.0;
    for (const GridSample& g : samples) {
        scale = std::max(scale, std::abs(g.x));
    }
    scale = scale > 0.0 ? scale : 1.0;
    MatrixXd M(static_cast<Index>(n), nv);
    MatrixXd C = MatrixXd::Zero(static_cast<Index>(n), nv);
    VectorXd h(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double x = samples[i].x;
        const double hi = samples[i].h;
        if (!std::isfinite(x) || !std::isfinite(hi)) {
            throw std::invalid_argument("fit_rational: non-finite sample at index " + std::to_string(i));
        }
        const auto r = static_cast<Index>(i);
        double xp = 1.0;
        const double xs = x / scale;
        for (Index l = 0; l < nb; ++l) {
            M(r, l) = xp;
            if (l > 0) {
                M(r, nb + l - 1) = -hi * xp;
                C(r, nb + l - 1) = xp;
            }
            xp *= xs;
        }
        h(r) = hi;
    }
    // A(x_i) >= beta  <=>  C_i theta >= beta - 1
    const double bound = beta - 1.0;

    // a = 0 is feasible since A = 1 > beta.
    VectorXd theta = VectorXd::Zero(nv);
    theta.head(nb) = min_norm_solve(M.leftCols(nb), h);

    std::vector<Index> working;
    std::set<Index> locked;
    Index just_dropped = -1;
    bool at_subspace_minimum = false;
    const double h_norm = std::max(1.0, h.norm());
    const std::size_t max_iter = 20 * (n + static_cast<std::size_t>(nv));
    std::size_t iter = 0;
    for (; iter < max_iter; ++iter) {
        MatrixXd Cw(static_cast<Index>(working.size()), nv);
        for (std::size_t k = 0; k < working.size(); ++k) {
            Cw.row(static_cast<Index>(k)) = C.row(working[k]);
        }
        VectorXd p = VectorXd::Zero(nv);
        if (!at_subspace_minimum) {
            const MatrixXd Z = null_space(Cw);
            if (Z.cols() > 0) {
                p = Z * min_norm_solve(M * Z, h - M * theta);
            }
        }
        if (at_subspace_minimum || (M * p).norm() <= 1e-13 * h_norm) {
            if (working.empty()) {
                break;
            }
            const VectorXd grad = M.transpose() * (M * theta - h);
            const VectorXd lambda = min_norm_solve(Cw.transpose(), grad);
            Index worst = -1;
            double most_negative = -1e-12 * (1.0 + grad.lpNorm<Eigen::Infinity>());
            for (Index k = 0; k < lambda.size(); ++k) {
                if (lambda(k) < most_negative && !locked.contains(working[static_cast<std::size_t>(k)])) {
                    most_negative = lambda(k);
                    worst = k;
                }
            }
            if (worst < 0) {
                break;
            }
            just_dropped = working[static_cast<std::size_t>(worst)];
            at_subspace_minimum = false;
            working.erase(working.begin() + worst);
            continue;
        }
        if (just_dropped >= 0 && C.row(just_dropped).dot(p) < 0.0) {
            locked.insert(just_dropped);
            working.push_back(just_dropped);
            just_dropped = -1;
            at_subspace_minimum = true;
            continue;
        }
        double step = 1.0;
        Index blocking = -1;
        for (Index i = 0; i < C.rows(); ++i) {
            if (i == just_dropped || std::find(working.begin(), working.end(), i) != working.end()) {
                continue;
            }
            const double cp = C.row(i).dot(p);
            if (cp < 0.0) {
                const double slack = C.row(i).dot(theta) - bound;
                const double s = std::max(0.0, slack) / -cp;
                if (s < step) {
                    step = s;
                    blocking = i;
                }
            }
        }
        theta += step * p;
        just_dropped = -1;
        at_subspace_minimum = blocking < 0;
        if (blocking >= 0) {
            working.push_back(blocking);
        }
    }
    if (iter == max_iter) {
        throw DesignError("fit_rational: active-set iteration did not converge after " +
                          std::to_string(max_iter) + " steps (working set size " +
                          std::to_string(working.size()) + ")");
    }

    RationalFit fit;
    fit.poly.b.assign(theta.data(), theta.data() + nb);
    fit.poly.a.assign(theta.data() + nb, theta.data() + nv);
    double unscale = 1.0;
    for (std::size_t l = 0; l <= K; ++l) {
        fit.poly.b[l] *= unscale;
        if (l > 0) {
            fit.poly.a[l - 1] *= unscale;
        }
        unscale /= scale;
    }
    fit.loss = (M * theta - h).squaredNorm();
    fit.active_constraints = working.size();
    fit.iterations = iter;
    for (std::size_t i = 0; i < n; ++i) {
        const double Ai = fit.poly.denominator(samples[i].x);
        if (Ai < beta - 1e-9) {
            throw DesignError("fit_rational: constraint A(x) >= beta violated at x = " +
                              std::to_string(samples[i].x) + " (A - beta = " + std::to_string(Ai - beta) + ")");
        }
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Partial fractions

namespace {

/// Roots psi of psi^K + a_1 psi^{K-1} + ... + a_K, i.e. the reciprocals of the
/// roots of A(x) = prod (1 - psi x).
std::vector<Complex> reciprocal_roots(const std::vector<double>& a) {
    const auto K = static_cast<Index>(a.size());
    MatrixXd companion = MatrixXd::Zero(K, K);
    for (Index j = 0; j < K; ++j) {
        companion(0, j) = -a[static_cast<std::size_t>(j)];
    }
    for (Index i = 1; i < K; ++i) {
        companion(i, i - 1) = 1.0;
    }
    Eigen::EigenSolver<MatrixXd> solver(companion, false);
    if (solver.info() != Eigen::Success) {
        throw DesignError("partial_fractions: companion eigenvalue solver failed");
    }
    std::vector<Complex> roots(solver.eigenvalues().data(), solver.eigenvalues().data() + K);
    // One Newton step on the monic polynomial, kept only when it lowers |A|.
    const auto eval = [&a](Complex r, Complex& dp) {
        Complex p = 1.0;
        dp = 0.0;
        for (double coeff : a) {
            dp = dp * r + p;
            p = p * r + coeff;
        }
        return p;
    };
    for (Complex& r : roots) {
        Complex dp;
        const Complex p = eval(r, dp);
        if (std::abs(dp) > 0.0) {
            const Complex next = r - p / dp;
            Complex unused;
            if (std::isfinite(next.real()) && std::isfinite(next.imag()) &&
                std::abs(eval(next, unused)) < std::abs(p)) {
                r = next;
            }
        }
    }
    return roots;
}

/// Makes the root multiset exactly closed under conjugation.
void close_under_conjugation(std::vector<Complex>& roots) {
    const std::size_t K = roots.size();
    std::vector<bool> done(K, false);
    for (std::size_t i = 0; i < K; ++i) {
        if (done[i]) {
            continue;
        }
        if (std::abs(roots[i].imag()) <= 1e-10 * std::max(1.0, std::abs(roots[i]))) {
            roots[i] = roots[i].real();
            done[i] = true;
            continue;
        }
        std::size_t partner = K;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < K; ++j) {
            if (j == i || done[j]) {
                continue;
            }
            const double dist = std::abs(roots[j] - std::conj(roots[i]));
            if (dist < best) {
                best = dist;
                partner = j;
            }
        }
        if (partner == K || best > 1e-6 * std::max(1.0, std::abs(roots[i]))) {
            throw DesignError("partial_fractions: complex root without conjugate partner");
        }
        const Complex mean = 0.5 * (roots[i] + std::conj(roots[partner]));
        roots[i] = mean;
        roots[partner] = std::conj(mean);
        done[i] = done[partner] = true;
    }
}

Complex derivative_of_denominator(const std::vector<double>& a, Complex x) {
    Complex acc = 0.0;
    for (std::size_t l = a.size(); l >= 1; --l) {
        acc = acc * x + static_cast<double>(l) * a[l - 1];
    }
    return acc;
}

} // namespace

namespace {

struct ReducedPair {
    std::vector<double> a;
    std::vector<double> b;
};

ReducedPair reduce_order(const PolyPair& pp) {
    std::vector<double> a = pp.a;
    std::vector<double> b = pp.b;
    const double scale = std::max(
        1.0, std::accumulate(a.begin(), a.end(), 0.0,
                             [](double m, double v) { return std::max(m, std::abs(v)); }));
    while (!a.empty() && std::abs(a.back()) <= 1e-12 * scale) {
        a.pop_back();
    }
    const std::size_t K = a.size();
    const double bscale = std::accumulate(b.begin(), b.end(), 0.0,
                                          [](double m, double v) { return std::max(m, std::abs(v)); });
    for (std::size_t l = K + 1; l < b.size(); ++l) {
        if (std::abs(b[l]) > 1e-12 * std::max(1.0, bscale)) {
            throw DesignError("partial_fractions: numerator degree exceeds denominator degree " +
                              std::to_string(K) + " (improper rational function)");
        }
    }
    b.resize(K + 1, 0.0);
    return {std::move(a), std::move(b)};
}

ArmaFilter expand_with_poles(const ReducedPair& rp, std::vector<Complex> psi) {
    const std::vector<double>& a = rp.a;
    const std::vector<double>& b = rp.b;
    const std::size_t K = a.size();
    ArmaFilter f;
    if (K == 0) {
        f.c = b[0];
        return f;
    }
    f.c = b[K] / a[K - 1];

    if (psi.size() != K) {
        throw DesignError("partial_fractions: expected " + std::to_string(K) + " poles, got " +
                          std::to_string(psi.size()));
    }
    for (const Complex& r : psi) {
        if (std::abs(r) < 1e-300 || std::abs(1.0 / r) < 1e-12) {
            throw DesignError("partial_fractions: denominator root too close to zero");
        }
    }
    close_under_conjugation(psi);
    double min_separation = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = i + 1; j < K; ++j) {
            const double gap = std::abs(1.0 / psi[i] - 1.0 / psi[j]);
            if (gap <= 1e-8) {
                throw DesignError("partial_fractions: confluent poles unsupported");
            }
            min_separation = std::min(min_separation, gap / std::max(1.0, std::abs(1.0 / psi[i])));
        }
    }

    PolyPair reduced{a, b};
    f.taps.reserve(K);
    for (const Complex& p : psi) {
        const Complex x = 1.0 / p;
        const Complex phi = -reduced.numerator(x) / (x * derivative_of_denominator(a, x));
        f.taps.push_back({p, phi});
    }
    // Conjugate taps get exactly conjugate residues.
    for (std::size_t i = 0; i < K; ++i) {
        if (f.taps[i].psi.imag() == 0.0) {
            f.taps[i].phi = f.taps[i].phi.real();
            continue;
        }
        if (f.taps[i].psi.imag() > 0.0) {
            for (std::size_t j = 0; j < K; ++j) {
                if (f.taps[j].psi == std::conj(f.taps[i].psi)) {
                    f.taps[j].phi = std::conj(f.taps[i].phi);
                }
            }
        }
    }

    // Round-trip check on 32 points of (0, 2).
    for (int k = 0; k < 32; ++k) {
        const double x = 2.0 * (k + 0.5) / 32.0 + 1e-3 * std::sin(k + 1.0);
        const double A = reduced.denominator(x);
        if (std::abs(A) < 1e-6) {
            continue;
        }
        const double expected = reduced.numerator(x) / A;
        Complex got = f.c;
        for (const Tap& t : f.taps) {
            got += t.phi / (1.0 - t.psi * x);
        }
        if (std::abs(got - expected) > 1e-8 * std::max(1.0, std::abs(expected))) {
            if (min_separation < 1e-5) {
                throw DesignError("partial_fractions: confluent poles unsupported (root separation " +
                                  std::to_string(min_separation) + ")");
            }
            throw DesignError("partial_fractions: round trip mismatch at x = " + std::to_string(x));
        }
    }
    return f;
}

} // namespace

ArmaFilter partial_fractions(const PolyPair& pp) {
    ReducedPair rp = reduce_order(pp);
    if (rp.a.empty()) {
        return expand_with_poles(rp, {});
    }
    std::vector<Complex> psi = reciprocal_roots(rp.a);
    return expand_with_poles(rp, std::move(psi));
}

double evaluate_response(const ArmaFilter& f, double mu) {
    Complex acc = f.c;
    for (const Tap& t : f.taps) {
        const Complex den = 1.0 - t.psi * mu;
        if (std::abs(den) < 1e-14) {
            throw std::domain_error("evaluate_response: mu = " + std::to_string(mu) + " is a pole");
        }
        acc += t.phi / den;
    }
    if (std::abs(acc.imag()) >= 1e-9 * std::max(1.0, std::abs(acc.real()))) {
        throw std::domain_error("evaluate_response: taps are not conjugate-closed (imaginary part " +
                                std::to_string(acc.imag()) + ")");
    }
    return acc.real();
}

namespace {

/// Coefficients of prod_l (1 - psi_l x), ascending powers.
std::vector<Complex> expand_product(const std::vector<Complex>& psi, std::size_t skip) {
    std::vector<Complex> poly{1.0};
    for (std::size_t l = 0; l < psi.size(); ++l) {
        if (l == skip) {
            continue;
        }
        poly.push_back(0.0);
        for (std::size_t k = poly.size() - 1; k >= 1; --k) {
            poly[k] -= psi[l] * poly[k - 1];
        }
    }
    return poly;
}

} // namespace

PolyPair to_poly_pair(const ArmaFilter& f) {
    const std::size_t K = f.order();
    std::vector<Complex> psi;
    for (const Tap& t : f.taps) {
        psi.push_back(t.psi);
    }
    const auto A = expand_product(psi, K);
    std::vector<Complex> B(K + 1, 0.0);
    for (std::size_t k = 0; k <= K; ++k) {
        B[k] = f.c * A[k];
    }
    for (std::size_t l = 0; l < K; ++l) {
        const auto partial = expand_product(psi, l);
        for (std::size_t k = 0; k < partial.size(); ++k) {
            B[k] += f.taps[l].phi * partial[k];
        }
    }
    PolyPair pp;
    for (std::size_t k = 1; k <= K; ++k) {
        pp.a.push_back(A[k].real());
    }
    for (std::size_t k = 0; k <= K; ++k) {
        pp.b.push_back(B[k].real());
    }
    return pp;
}

double noise_power_gain(const ArmaFilter& f, double mu) {
    Complex acc = 0.0;
    Complex phi_sum = 0.0;
    for (const Tap& a : f.taps) {
        phi_sum += a.phi;
        for (const Tap& b : f.taps) {
            acc += a.phi * std::conj(b.phi) / (1.0 - a.psi * std::conj(b.psi) * mu * mu);
        }
    }
    return acc.real() + f.c * (f.c + 2.0 * phi_sum.real());
}

double max_noise_power_gain(const ArmaFilter& f, double rho, std::size_t n_points) {
    if (n_points < 2) {
        throw std::invalid_argument("max_noise_power_gain: need at least two points");
    }
    double m = 0.0;
    for (std::size_t k = 0; k < n_points; ++k) {
        const double mu = rho * static_cast<double>(k) / static_cast<double>(n_points - 1);
        m = std::max(m, noise_power_gain(f, mu));
    }
    return m;
}

StabilityCheck check_stability(const ArmaFilter& f, double rho) {
    StabilityCheck out;
    out.margin = f.max_pole_modulus() * rho;
    out.stable = out.margin < 1.0;
    return out;
}

double max_relative_error(const ArmaFilter& f, std::span<const GridSample> samples) {
    double worst = 0.0;
    for (const GridSample& s : samples) {
        worst = std::max(worst, std::abs(evaluate_response(f, s.x) - s.h) / s.h);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Stable minimax refinement

namespace {

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

/// Poles psi parametrized so that every parameter vector is admissible:
/// conjugate pairs by (modulus, angle) squashed into the disk of radius
/// r_max, real poles by r_max * tanh(t).
struct PoleLayout {
    std::size_t pairs;
    std::size_t reals;
    double r_max;

    std::size_t dimension() const { return 2 * pairs + reals; }

    std::vector<Complex> poles(const VectorXd& params) const {
        std::vector<Complex> psi;
        psi.reserve(dimension());
        for (std::size_t k = 0; k < pairs; ++k) {
            const double modulus = r_max * logistic(params(static_cast<Index>(2 * k)));
            const double angle = std::numbers::pi * logistic(params(static_cast<Index>(2 * k + 1)));
            const Complex p = std::polar(modulus, angle);
            psi.push_back(p);
            psi.push_back(std::conj(p));
        }
        for (std::size_t k = 0; k < reals; ++k) {
            psi.emplace_back(r_max * std::tanh(params(static_cast<Index>(2 * pairs + k))), 0.0);
        }
        return psi;
    }
};

std::vector<double> denominator_from_poles(const std::vector<Complex>& psi) {
    const auto poly = expand_product(psi, psi.size());
    std::vector<double> a;
    for (std::size_t k = 1; k < poly.size(); ++k) {
        a.push_back(poly[k].real());
    }
    return a;
}

struct MinimaxResult {
    double error = std::numeric_limits<double>::infinity();
    std::vector<double> b;
};

/// Numerator minimizing max_i |B(x_i) / (A(x_i) h_i) - 1| by Lawson's
/// iteratively reweighted least squares.
MinimaxResult minimax_numerator(std::span<const GridSample> samples, const std::vector<double>& a,
                                std::size_t iterations) {
    const auto n = static_cast<Index>(samples.size());
    const auto nb = static_cast<Index>(a.size() + 1);
    PolyPair den{a, {}};
    MatrixXd M(n, nb);
    for (Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        const double Ai = den.denominator(s.x);
        if (!(Ai > 1e-8)) {
            return {};
        }
        double xp = 1.0 / (Ai * s.h);
        for (Index l = 0; l < nb; ++l) {
            M(i, l) = xp;
            xp *= s.x;
        }
    }
    VectorXd w = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    MinimaxResult best;
    for (std::size_t it = 0; it < iterations; ++it) {
        const MatrixXd G = M.transpose() * w.asDiagonal() * M;
        const VectorXd rhs = M.transpose() * w;
        const VectorXd coef = G.ldlt().solve(rhs);
        const VectorXd e = (M * coef - VectorXd::Ones(n)).cwiseAbs();
        const double emax = e.maxCoeff();
        if (!std::isfinite(emax)) {
            break;
        }
        if (emax < best.error) {
            best.error = emax;
            best.b.assign(coef.data(), coef.data() + nb);
        }
        w = w.cwiseProduct(e);
        const double total = w.sum();
        if (!(total > 0.0)) {
            break;
        }
        w /= total;
    }
    return best;
}

struct Objective {
    std::span<const GridSample> samples;
    PoleLayout layout;
    double min_separation;
    double max_residue;
    double rho;
    double max_noise_gain;
    std::size_t lawson_iterations;

    double operator()(const VectorXd& params) const {
        const auto psi = layout.poles(params);
        double penalty = 0.0;
        for (std::size_t i = 0; i < psi.size(); ++i) {
            for (std::size_t j = i + 1; j < psi.size(); ++j) {
                const double d = std::abs(psi[i] - psi[j]);
                if (d < min_separation) {
                    penalty = std::max(penalty, (min_separation - d) / min_separation);
                }
            }
        }
        const auto a = denominator_from_poles(psi);
        const auto fit = minimax_numerator(samples, a, lawson_iterations);
        if (fit.b.empty()) {
            return std::numeric_limits<double>::infinity();
        }
        const PolyPair pp{a, fit.b};
        ArmaFilter f;
        f.c = fit.b.back() / a.back();
        double largest = 0.0;
        for (const Complex& p : psi) {
            const Complex x = 1.0 / p;
            const Complex phi = -pp.numerator(x) / (x * derivative_of_denominator(a, x));
            largest = std::max(largest, std::abs(phi));
            f.taps.push_back({p, phi});
        }
        if (largest > max_residue) {
            penalty += std::log10(largest / max_residue);
        }
        if (std::isfinite(max_noise_gain)) {
            const double gain = max_noise_power_gain(f, rho, 32);
            if (gain > max_noise_gain) {
                penalty += gain / max_noise_gain - 1.0;
            }
        }
        return fit.error + penalty;
    }
};

struct NelderMeadResult {
    VectorXd x;
    double value;
};

NelderMeadResult nelder_mead(const Objective& f, VectorXd start, double step, std::size_t budget) {
    const Index d = start.size();
    std::vector<VectorXd> simplex{start};
    std::vector<double> values{f(start)};
    for (Index k = 0; k < d; ++k) {
        VectorXd v = start;
        v(k) += step;
        simplex.push_back(v);
        values.push_back(f(v));
    }
    std::size_t evals = simplex.size();
    std::vector<std::size_t> order(simplex.size());
    while (evals < budget) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[order.size() - 2];
        if (values[worst] - values[best] < 1e-10) {
            break;
        }
        VectorXd centroid = VectorXd::Zero(d);
        for (std::size_t i : order) {
            if (i != worst) {
                centroid += simplex[i];
            }
        }
        centroid /= static_cast<double>(d);
        const VectorXd reflected = centroid + (centroid - simplex[worst]);
        const double fr = f(reflected);
        ++evals;
        if (fr < values[best]) {
            const VectorXd expanded = centroid + 2.0 * (centroid - simplex[worst]);
            const double fe = f(expanded);
            ++evals;
            if (fe < fr) {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
            continue;
        }
        if (fr < values[second]) {
            simplex[worst] = reflected;
            values[worst] = fr;
            continue;
        }
        const bool outside = fr < values[worst];
        const VectorXd contracted = outside ? VectorXd(centroid + 0.5 * (reflected - centroid))
                                            : VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
        const double fc = f(contracted);
        ++evals;
        if (fc < std::min(fr, values[worst])) {
            simplex[worst] = contracted;
            values[worst] = fc;
            continue;
        }
        for (std::size_t i : order) {
            if (i == best) {
                continue;
            }
            simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
            values[i] = f(simplex[i]);
            ++evals;
        }
    }
    const auto it = std::min_element(values.begin(), values.end());
    const auto idx = static_cast<std::size_t>(it - values.begin());
    return {simplex[idx], *it};
}

/// Parameters of `layout` approximating the given poles, when their shape
/// (count of conjugate pairs) matches.
std::optional<VectorXd> params_from_poles(const PoleLayout& layout, std::vector<Complex> psi) {
    std::vector<Complex> upper;
    std::vector<double> reals;
    for (const Complex& p : psi) {
        if (p.imag() > 0.0) {
            upper.push_back(p);
        } else if (p.imag() == 0.0) {
            reals.push_back(p.real());
        }
    }
    if (upper.size() != layout.pairs || reals.size() != layout.reals) {
        return std::nullopt;
    }
    VectorXd params(static_cast<Index>(layout.dimension()));
    const auto clamp_ratio = [&](double r) { return std::clamp(r / layout.r_max, 0.05, 0.95); };
    for (std::size_t k = 0; k < layout.pairs; ++k) {
        params(static_cast<Index>(2 * k)) = logit(clamp_ratio(std::abs(upper[k])));
        params(static_cast<Index>(2 * k + 1)) =
            logit(std::clamp(std::arg(upper[k]) / std::numbers::pi, 0.05, 0.95));
    }
    for (std::size_t k = 0; k < layout.reals; ++k) {
        const double r = std::clamp(reals[k] / layout.r_max, -0.95, 0.95);
        params(static_cast<Index>(2 * layout.pairs + k)) = std::atanh(r);
    }
    return params;
}

struct RefinedFit {
    PolyPair poly;
    std::vector<Complex> poles;
};

RefinedFit refine_stable(std::span<const GridSample> samples, const PolyPair& initial, double rho,
                         const DesignOptions& options) {
    const std::size_t K = initial.order();
    const double r_max = options.max_pole_gain / rho;
    const double separation = options.min_pole_separation / rho;

    std::optional<std::vector<Complex>> initial_poles;
    try {
        const ArmaFilter f0 = partial_fractions(initial);
        if (f0.order() == K) {
            std::vector<Complex> psi;
            for (const Tap& t : f0.taps) {
                psi.push_back(t.psi);
            }
            initial_poles = psi;
        }
    } catch (const DesignError&) {
        // Degenerate initial fit; the structured starts below still apply.
    }

    double best_value = std::numeric_limits<double>::infinity();
    std::vector<Complex> best_poles;
    for (std::size_t pairs = K / 2 + 1; pairs-- > 0;) {
        const PoleLayout layout{pairs, K - 2 * pairs, r_max};
        const Objective objective{samples, layout, separation, options.max_residue, rho,
                                  options.max_noise_gain, 40};
        std::vector<VectorXd> starts;
        VectorXd spread(static_cast<Index>(layout.dimension()));
        for (std::size_t k = 0; k < pairs; ++k) {
            spread(static_cast<Index>(2 * k)) = 1.0;
            spread(static_cast<Index>(2 * k + 1)) =
                logit((static_cast<double>(k) + 1.0) / (static_cast<double>(pairs) + 1.0));
        }
        for (std::size_t k = 0; k < layout.reals; ++k) {
            const double sign = (k % 2 == 0) ? -1.0 : 1.0;
            spread(static_cast<Index>(2 * pairs + k)) = sign * (0.4 + 0.3 * static_cast<double>(k / 2));
        }
        starts.push_back(spread);
        if (initial_poles) {
            if (auto p = params_from_poles(layout, *initial_poles)) {
                starts.push_back(*p);
            }
        }
        for (const VectorXd& start : starts) {
            auto result = nelder_mead(objective, start, 0.5, options.max_evaluations);
            // A restart from the optimum escapes a collapsed simplex.
            result = nelder_mead(objective, result.x, 0.25, options.max_evaluations / 2);
            if (result.value < best_value) {
                best_value = result.value;
                best_poles = layout.poles(result.x);
            }
        }
    }

    PolyPair out;
    out.a = denominator_from_poles(best_poles);
    const auto numerator = minimax_numerator(samples, out.a, 800);
    if (numerator.b.empty()) {
        throw DesignError("refinement failed to produce a finite fit");
    }
    out.b = numerator.b;
    return {out, best_poles};
}

} // namespace

FilterDesign design_gfss_arma(double gamma, std::size_t K, double beta, std::size_t n_grid,
                              double rho, const DesignOptions& options) {
    if (!(gamma > 0.0)) {
        throw std::invalid_argument("design: gamma must be positive");
    }
    if (!(rho > 0.0)) {
        throw std::invalid_argument("design: spectral radius must be positive");
    }
    if (!(options.max_pole_gain > 0.0 && options.max_pole_gain < 1.0)) {
        throw std::invalid_argument("design: max_pole_gain must lie in (0, 1)");
    }
    if (!(options.max_noise_gain > 0.0)) {
        throw std::invalid_argument("design: max_noise_gain must be positive");
    }
    const auto samples = sample_target(gamma, n_grid);
    const RationalFit fit = fit_rational(samples, K, beta);

    FilterDesign d;
    d.gamma = gamma;
    d.K = K;
    d.beta = beta;
    d.n_grid = n_grid;
    d.rho = rho;
    d.ls_loss = fit.loss;
    if (options.refine) {
        // The poles are known exactly here; root finding on the expanded
        // denominator would only lose accuracy.
        RefinedFit refined = refine_stable(samples, fit.poly, rho, options);
        d.poly = refined.poly;
        d.filter = expand_with_poles(reduce_order(d.poly), std::move(refined.poles));
    } else {
        d.poly = fit.poly;
        d.filter = partial_fractions(d.poly);
    }
    d.max_relative_error = max_relative_error(d.filter, samples);
    d.noise_gain = max_noise_power_gain(d.filter, rho);
    d.stability = check_stability(d.filter, rho);
    if (!d.stability.stable) {
        throw StabilityError("designed filter is unstable: max|psi| * rho = " +
                                 std::to_string(d.stability.margin),
                             d.stability.margin);
    }
    return d;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const ArmaFilter& f) {
    j = nlohmann::json{{"c", f.c}, {"taps", nlohmann::json::array()}};
    for (const Tap& t : f.taps) {
        j["taps"].push_back({{"psi_re", t.psi.real()},
                             {"psi_im", t.psi.imag()},
                             {"phi_re", t.phi.real()},
                             {"phi_im", t.phi.imag()}});
    }
}

void from_json(const nlohmann::json& j, ArmaFilter& f) {
    f.c = j.at("c").get<double>();
    f.taps.clear();
    for (const auto& t : j.at("taps")) {
        f.taps.push_back({{t.at("psi_re").get<double>(), t.at("psi_im").get<double>()},
                          {t.at("phi_re").get<double>(), t.at("phi_im").get<double>()}});
    }
}

void to_json(nlohmann::json& j, const FilterDesign& d) {
    to_json(j, d.filter);
    j["gamma"] = d.gamma;
    j["K"] = d.K;
    j["beta"] = d.beta;
    j["n_grid"] = d.n_grid;
    j["rho"] = d.rho;
    j["a"] = d.poly.a;
    j["b"] = d.poly.b;
    j["ls_loss"] = d.ls_loss;
    j["max_relative_error"] = d.max_relative_error;
    j["noise_gain"] = d.noise_gain;
    j["stability_margin"] = d.stability.margin;
}

void from_json(const nlohmann::json& j, FilterDesign& d) {
    from_json(j, d.filter);
    d.gamma = j.value("gamma", 0.0);
    d.K = j.value("K", d.filter.order());
    d.beta = j.value("beta", 0.0);
    d.n_grid = j.value("n_grid", std::size_t{0});
    d.rho = j.value("rho", 0.0);
    d.poly.a = j.value("a", std::vector<double>{});
    d.poly.b = j.value("b", std::vector<double>{});
    d.ls_loss = j.value("ls_loss", 0.0);
    d.max_relative_error = j.value("max_relative_error", 0.0);
    d.noise_gain = j.value("noise_gain", 0.0);
    d.stability.margin = j.value("stability_margin", d.filter.max_pole_modulus() * d.rho);
    d.stability.stable = d.stability.margin < 1.0;
}

} // namespace dagfss
