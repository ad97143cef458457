#pragma once

#include <cmath>
#include <cstdint>

#include "adalora/matrix.hpp"

namespace adalora {

/// SplitMix64: counter-based 64-bit generator. Every run derives independent
/// streams from its seed via fork(), so results are reproducible bit-for-bit
/// across platforms regardless of draw order elsewhere.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; consumes exactly two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard against log(0).
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Independent child stream; mixes the salt so sibling streams decorrelate.
    SplitMix64 fork(std::uint64_t salt) {
        SplitMix64 mixer(state_ ^ (salt * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL));
        return SplitMix64(mixer.next_u64());
    }

    Matrix gaussian_matrix(int rows, int cols, double stddev) {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m.at(i) = stddev * normal();
        return m;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace adalora
