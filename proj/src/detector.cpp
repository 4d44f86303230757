#include "dagfss/detector.hpp"

#include <stdexcept>

namespace dagfss {

std::string to_string(Detector d) {
    switch (d) {
    case Detector::CoherentSum:
        return "coherent";
    case Detector::SquaredNorm:
        return "squared-norm";
    case Detector::Independent:
        return "independent";
    case Detector::Centralized:
        return "centralized";
    }
    return "unknown";
}

Detector parse_detector(std::string_view name) {
    for (Detector d : all_detectors) {
        if (name == to_string(d)) {
            return d;
        }
    }
    throw std::invalid_argument("unknown detector '" + std::string(name) +
                                "' (expected coherent, squared-norm, independent or centralized)");
}

} // namespace dagfss
