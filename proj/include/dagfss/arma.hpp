#ifndef DAGFSS_ARMA_HPP
#define DAGFSS_ARMA_HPP

#include <complex>
#include <limits>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace dagfss {

using Complex = std::complex<double>;

class DesignError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when a filter would diverge on the graph it is meant for.
class StabilityError : public DesignError {
  public:
    StabilityError(const std::string& what, double margin) : DesignError(what), margin_(margin) {}
    double margin() const noexcept { return margin_; }

  private:
    double margin_;
};

/// Rational response B(x) / A(x) with A(x) = 1 + sum_{l=1..K} a[l-1] x^l and
/// B(x) = sum_{l=0..K} b[l] x^l.
struct PolyPair {
    std::vector<double> a;
    std::vector<double> b;

    std::size_t order() const noexcept { return a.size(); }
    double denominator(double x) const;
    double numerator(double x) const;
    Complex denominator(Complex x) const;
    Complex numerator(Complex x) const;
};

struct Tap {
    Complex psi;
    Complex phi;
};

/// Parallel ARMA_K graph filter: h(mu) = c + sum_l phi_l / (1 - psi_l mu).
/// Taps are closed under complex conjugation.
struct ArmaFilter {
    double c = 0.0;
    std::vector<Tap> taps;

    std::size_t order() const noexcept { return taps.size(); }
    double max_pole_modulus() const;
};

struct GridSample {
    double x;
    double h;
};

/// Uniform grid x_i = 2 i / (n_grid + 1), i = 1..n_grid, on (0, 2) with the
/// GFSS gain at each point.
std::vector<GridSample> sample_target(double gamma, std::size_t n_grid);

struct RationalFit {
    PolyPair poly;
    double loss = 0.0;              ///< sum_i [B(x_i) - h_i A(x_i)]^2
    std::size_t active_constraints = 0;
    std::size_t iterations = 0;
};

/// Minimizes sum_i [B(x_i) - h_i A(x_i)]^2 over (a, b) subject to
/// A(x_i) >= beta at every sample, by a primal active-set method.
RationalFit fit_rational(std::span<const GridSample> samples, std::size_t K, double beta);

/// Pole/residue form of B/A. Denominator coefficients that vanish (|a_l| below
/// 1e-12) lower the order; an improper remainder is an error.
ArmaFilter partial_fractions(const PolyPair& pp);

/// Real part of c + sum phi_l / (1 - psi_l mu); throws at a pole or when the
/// imaginary residue exceeds 1e-9.
double evaluate_response(const ArmaFilter& f, double mu);

/// Expands the filter back to (a, b) coefficients.
PolyPair to_poly_pair(const ArmaFilter& f);

struct StabilityCheck {
    double margin = 0.0; ///< max_l |psi_l| * rho
    bool stable = false;
};

StabilityCheck check_stability(const ArmaFilter& f, double rho);

/// Steady-state variance of the filter output along a Laplacian mode with
/// eigenvalue mu, per unit input variance, when the input is temporally white:
/// sum_{l,l'} phi_l phi_l'^* / (1 - psi_l psi_l'^* mu^2) + c (c + 2 sum_l phi_l).
double noise_power_gain(const ArmaFilter& f, double mu);

/// Largest noise_power_gain on n_points evenly spaced over [0, rho].
double max_noise_power_gain(const ArmaFilter& f, double rho, std::size_t n_points = 257);

struct DesignOptions {
    /// Refine the least-squares fit into a stable minimax fit. When false the
    /// raw constrained least-squares fit is expanded as is.
    bool refine = true;
    /// Upper bound on max_l |psi_l| * rho for the refined filter.
    double max_pole_gain = 0.9;
    /// Minimum distance between distinct poles psi, relative to 1 / rho.
    double min_pole_separation = 0.1;
    /// Residues |phi_l| above this are penalized.
    double max_residue = 100.0;
    /// Upper bound on the white-noise power gain over [0, rho] (see
    /// noise_power_gain). Unbounded by default.
    double max_noise_gain = std::numeric_limits<double>::infinity();
    /// Nelder-Mead budget per start.
    std::size_t max_evaluations = 2500;
};

struct FilterDesign {
    ArmaFilter filter;
    PolyPair poly;
    double gamma = 0.0;
    std::size_t K = 0;
    double beta = 0.0;
    std::size_t n_grid = 0;
    double rho = 0.0;
    double ls_loss = 0.0;           ///< loss of the initial constrained fit
    double max_relative_error = 0.0; ///< over the design grid
    double noise_gain = 0.0;         ///< max_noise_power_gain over [0, rho]
    StabilityCheck stability;
};

/// sample_target -> fit_rational -> (refinement) -> partial_fractions ->
/// check_stability. Throws StabilityError when the result is unstable for rho.
FilterDesign design_gfss_arma(double gamma, std::size_t K, double beta, std::size_t n_grid,
                              double rho, const DesignOptions& options = {});

/// max_i |h(x_i) - h*(x_i)| / h*(x_i) over the design grid.
double max_relative_error(const ArmaFilter& f, std::span<const GridSample> samples);

void to_json(nlohmann::json& j, const ArmaFilter& f);
void from_json(const nlohmann::json& j, ArmaFilter& f);
void to_json(nlohmann::json& j, const FilterDesign& d);
void from_json(const nlohmann::json& j, FilterDesign& d);

} // namespace dagfss

#endif // DAGFSS_ARMA_HPP
