#ifndef DAGFSS_DETECTOR_HPP
#define DAGFSS_DETECTOR_HPP

#include <array>
#include <string>
#include <string_view>

namespace dagfss {

/// Test statistics computed from the EWMA difference d_t.
enum class Detector {
    CoherentSum, ///< sum of d_t over the closed neighborhood of each vertex
    SquaredNorm, ///< 2-norm of d_t restricted to the closed neighborhood
    Independent, ///< |d_t(i)| at each vertex
    Centralized, ///< ||d_t||_2 over the whole graph, a single global test
};

inline constexpr std::array<Detector, 4> all_detectors{Detector::CoherentSum, Detector::SquaredNorm,
                                                       Detector::Independent, Detector::Centralized};

std::string to_string(Detector d);

/// Accepts "coherent", "squared-norm", "independent", "centralized".
Detector parse_detector(std::string_view name);

} // namespace dagfss

#endif // DAGFSS_DETECTOR_HPP
