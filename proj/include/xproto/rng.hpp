#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace xproto {

// Seedable generator with distribution code spelled out here rather than
// taken from <random>, so draws are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

    // Standard normal via Box-Muller (one value cached).
    double normal();

    // Uniformly random k-subset of [0, n) in draw order (partial Fisher-Yates).
    std::vector<std::size_t> choose(std::size_t n, std::size_t k);

    // Derives an independent child seed; used to give each worker its own stream.
    std::uint64_t split() { return engine_() ^ 0x9e3779b97f4a7c15ULL; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace xproto
