#include "fso/phy.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace fso {

void PhyParams::validate() const {
    if (!(std::isfinite(amplitude) && amplitude > 0.0))
        throw std::invalid_argument("amplitude must be > 0");
    if (!(std::isfinite(noise_sigma) && noise_sigma >= 0.0))
        throw std::invalid_argument("noise_sigma must be >= 0");
    if (!(std::isfinite(bit_rate) && bit_rate > 0.0))
        throw std::invalid_argument("bit_rate must be > 0");
}

std::vector<double> modulate_ook(std::span<const std::uint8_t> bits, double amplitude) {
    std::vector<double> out(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) out[i] = bits[i] ? amplitude : 0.0;
    return out;
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* op) {
    if (a != b)
        throw LengthMismatch(std::string(op) + ": " + std::to_string(a) + " samples but " +
                             std::to_string(b) + " gains");
}

}  // namespace

std::vector<double> apply_channel(std::span<const double> symbols, std::span<const double> gains,
                                  double noise_sigma, RngStream& rng) {
    check_lengths(symbols.size(), gains.size(), "apply_channel");
    std::vector<double> out(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        out[i] = gains[i] * symbols[i];
        if (noise_sigma > 0.0) out[i] += noise_sigma * rng.normal();
    }
    return out;
}

Bits demodulate_ook(std::span<const double> samples, std::span<const double> gains,
                    double amplitude) {
    check_lengths(samples.size(), gains.size(), "demodulate_ook");
    Bits out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out[i] = samples[i] > gains[i] * amplitude / 2.0 ? 1 : 0;
    return out;
}

Bits demodulate_ook_fixed(std::span<const double> samples, double amplitude) {
    Bits out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i] > amplitude / 2.0 ? 1 : 0;
    return out;
}

double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double theoretical_ber_ook(double h, double amplitude, double noise_sigma) {
    if (noise_sigma == 0.0) return 0.0;
    return q_function(h * amplitude / (2.0 * noise_sigma));
}

double theoretical_ber_ook_fixed(double h, double amplitude, double noise_sigma) {
    const double threshold = amplitude / 2.0;
    if (noise_sigma == 0.0) return h * amplitude > threshold ? 0.0 : 0.5;
    const double p_zero = q_function(threshold / noise_sigma);
    const double p_one = 1.0 - q_function((threshold - h * amplitude) / noise_sigma);
    return 0.5 * (p_zero + p_one);
}

}  // namespace fso
