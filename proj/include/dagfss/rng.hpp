#ifndef DAGFSS_RNG_HPP
#define DAGFSS_RNG_HPP

#include <cstdint>

namespace dagfss {

/// SplitMix64 finalizer: a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for a named sub-computation, so independent parts of an
/// experiment never share random numbers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// Counter-based draws: the value depends only on (seed, stream, index), never
/// on call order.
double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
double gaussian_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Sequential view over one counter-based stream.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double uniform() { return uniform_at(seed_, stream_, counter_++); }
    double gaussian() { return gaussian_at(seed_, stream_, counter_++); }
    std::uint64_t position() const noexcept { return counter_; }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

} // namespace dagfss

#endif // DAGFSS_RNG_HPP
