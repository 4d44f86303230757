#include "dagfss/rng.hpp"

#include <cmath>
#include <numbers>

namespace dagfss {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return mix64(mix64(seed) ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

namespace {

std::uint64_t bits_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return mix64(derive_seed(seed, stream) + mix64(index));
}

// (0, 1), never 0 so that log() is finite.
double open_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

} // namespace

double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return open_unit(bits_at(seed, stream, index));
}

double gaussian_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    // Box-Muller on two sub-draws of this index.
    const std::uint64_t base = bits_at(seed, stream, index);
    const double u1 = open_unit(mix64(base ^ 0x5851f42d4c957f2dULL));
    const double u2 = open_unit(mix64(base ^ 0x14057b7ef767814fULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace dagfss
