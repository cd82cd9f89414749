#pragma once

// Intensity-modulation / direct-detection physical layer: OOK over a
// multiplicative-gain channel with additive Gaussian receiver noise.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fso/rng.hpp"

namespace fso {

/// One bit per element, values 0 or 1.
using Bits = std::vector<std::uint8_t>;

enum class ThresholdMode {
    Csi,    // threshold h * A / 2 (genie channel knowledge)
    Fixed,  // threshold A / 2, ignores the instantaneous gain
};

struct PhyParams {
    double amplitude = 1.0;
    double noise_sigma = 0.05;
    double bit_rate = 248000.0;  // 200 kb/s video + 48 kb/s audio
    ThresholdMode threshold = ThresholdMode::Csi;

    void validate() const;
};

class LengthMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::vector<double> modulate_ook(std::span<const std::uint8_t> bits, double amplitude);

/// y_i = h_i x_i + n_i with n_i ~ Normal(0, noise_sigma^2).
std::vector<double> apply_channel(std::span<const double> symbols, std::span<const double> gains,
                                  double noise_sigma, RngStream& rng);

/// bit_i = 1 iff y_i > h_i A / 2.
Bits demodulate_ook(std::span<const double> samples, std::span<const double> gains,
                    double amplitude);

/// Fixed-threshold detector: bit_i = 1 iff y_i > A / 2.
Bits demodulate_ook_fixed(std::span<const double> samples, double amplitude);

/// Gaussian tail probability, 0.5 erfc(x / sqrt 2).
double q_function(double x);

double theoretical_ber_ook(double h, double amplitude, double noise_sigma);

/// BER of the fixed-threshold detector at gain h: errors on ones when
/// h A < A / 2 + n, on zeros when n > A / 2.
double theoretical_ber_ook_fixed(double h, double amplitude, double noise_sigma);

}  // namespace fso
