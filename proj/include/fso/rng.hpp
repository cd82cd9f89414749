#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace fso {

/// splitmix64 finalizer. Used to derive independent stream seeds from one
/// master seed:  stream_i = splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(master + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

/// Stream indices used by the link engine.
enum class StreamId : std::uint64_t { Fading = 0, Pointing = 1, Noise = 2, QuantileTable = 3 };

constexpr std::uint64_t derive_stream_seed(std::uint64_t master, StreamId id) noexcept {
    return derive_stream_seed(master, static_cast<std::uint64_t>(id));
}

/// Deterministic random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; the distributions are implemented here
/// so that sample paths do not depend on the standard library vendor.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1].
    double uniform_open_zero() noexcept { return 1.0 - uniform(); }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double radius = std::sqrt(-2.0 * std::log(uniform_open_zero()));
        const double angle = 2.0 * std::numbers::pi * uniform();
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Gamma(shape, scale = 1) via Marsaglia-Tsang; shape < 1 uses the
    /// U^(1/shape) boost.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double u = uniform_open_zero();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open_zero();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Rayleigh with scale sigma (mode at sigma).
    double rayleigh(double sigma) noexcept {
        return sigma * std::sqrt(-2.0 * std::log(uniform_open_zero()));
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fso
