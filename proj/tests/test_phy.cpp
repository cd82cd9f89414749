#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fso/channel_model.hpp"
#include "fso/phy.hpp"

using namespace fso;

namespace {

// mpmath, 40 digits
constexpr double kQ1 = 0.158655253931457051414767454367962077522;
constexpr double kQ2 = 0.0227501319481792072002826371665334374718;

Bits random_bits(RngStream& rng, std::size_t n) {
    Bits b(n);
    for (auto& x : b) x = rng.uniform() < 0.5 ? 0 : 1;
    return b;
}

double simulated_ber(double h, double amplitude, double sigma, std::size_t n, std::uint64_t seed) {
    RngStream data(seed), noise(seed + 1);
    const Bits bits = random_bits(data, n);
    const std::vector<double> gains(n, h);
    const auto rx = demodulate_ook(apply_channel(modulate_ook(bits, amplitude), gains, sigma, noise), gains,
                                   amplitude);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) errors += bits[i] != rx[i];
    return static_cast<double>(errors) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("modulate_ook") {
    CHECK(modulate_ook(Bits{}, 1.0).empty());
    CHECK(modulate_ook(Bits{1, 0, 1}, 2.0) == std::vector<double>{2.0, 0.0, 2.0});
    const Bits ones(1000, 1);
    const auto s = modulate_ook(ones, 0.75);
    CHECK(std::accumulate(s.begin(), s.end(), 0.0) == doctest::Approx(750.0));
}

TEST_CASE("apply_channel") {
    RngStream rng(1);
    const std::vector<double> x{2.0, 0.0, 1.5};
    CHECK(apply_channel(x, std::vector<double>(3, 1.0), 0.0, rng) == x);
    CHECK(apply_channel(std::vector<double>{2.0, 0.0}, std::vector<double>{0.5, 0.5}, 0.0, rng) ==
          std::vector<double>{1.0, 0.0});
    CHECK_THROWS_AS(apply_channel(x, std::vector<double>(2, 1.0), 0.0, rng), LengthMismatch);

    const std::size_t n = 1'000'000;
    const auto y = apply_channel(std::vector<double>(n, 0.0), std::vector<double>(n, 1.0), 0.1, rng);
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    CHECK(std::sqrt(ss / (n - 1)) == doctest::Approx(0.1).epsilon(0.01));
}

TEST_CASE("demodulate_ook") {
    SUBCASE("tie decides zero") {
        CHECK(demodulate_ook(std::vector<double>{0.25}, std::vector<double>{0.5}, 1.0) == Bits{0});
        CHECK(demodulate_ook(std::vector<double>{0.2500001}, std::vector<double>{0.5}, 1.0) == Bits{1});
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(demodulate_ook(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}, 1.0),
                        LengthMismatch);
    }
    SUBCASE("noiseless round-trip for any pattern and positive gains") {
        RngStream rng(17);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 500);
            const Bits bits = random_bits(rng, n);
            std::vector<double> gains(n);
            for (auto& g : gains) g = std::exp(-20.0 * rng.uniform());  // down to ~2e-9
            const double amp = 0.01 + 10.0 * rng.uniform();
            REQUIRE(demodulate_ook(apply_channel(modulate_ook(bits, amp), gains, 0.0, rng), gains, amp) == bits);
        }
    }
    SUBCASE("decisions depend only on the sign of y - hA/2") {
        RngStream rng(23);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 64;
            std::vector<double> y(n), h(n);
            for (std::size_t i = 0; i < n; ++i) {
                y[i] = 2.0 * rng.uniform() - 0.5;
                h[i] = 0.1 + rng.uniform();
            }
            const double amp = 0.5 + rng.uniform();
            const double k = std::exp(8.0 * rng.uniform() - 4.0);
            std::vector<double> ys(n), hs(n);
            for (std::size_t i = 0; i < n; ++i) {
                ys[i] = k * y[i];
                hs[i] = k * h[i];
            }
            // threshold h A / 2 is linear in each of h and A
            REQUIRE(demodulate_ook(y, h, amp) == demodulate_ook(ys, h, k * amp));
            REQUIRE(demodulate_ook(y, h, amp) == demodulate_ook(ys, hs, amp));
        }
    }
    SUBCASE("simulated BER at sigma 0.25 matches Q(2)") {
        CHECK(simulated_ber(1.0, 1.0, 0.25, 1'000'000, 5) == doctest::Approx(kQ2).epsilon(0.05));
    }
}

TEST_CASE("q_function") {
    CHECK(q_function(0.0) == 0.5);
    CHECK(q_function(1.0) == doctest::Approx(kQ1).epsilon(1e-12));
    CHECK(q_function(2.0) == doctest::Approx(kQ2).epsilon(1e-12));
    for (double x = -6.0; x <= 6.0; x += 0.25) CHECK(std::abs(q_function(-x) - (1.0 - q_function(x))) <= 1e-7);
}

TEST_CASE("theoretical_ber_ook") {
    CHECK(theoretical_ber_ook(1.0, 1.0, 0.0) == 0.0);
    CHECK(theoretical_ber_ook(1.0, 1.0, 0.25) == doctest::Approx(kQ2).epsilon(1e-12));
    double prev = 1.0;
    for (double h = 0.01; h < 5.0; h *= 1.1) {
        const double ber = theoretical_ber_ook(h, 1.0, 0.3);
        CHECK(ber <= prev);
        prev = ber;
    }
}

TEST_CASE("simulated BER tracks theory wherever it is measurable") {
    for (double sigma : {0.15, 0.2, 0.3, 0.45}) {
        const double expected = theoretical_ber_ook(1.0, 1.0, sigma);
        REQUIRE(expected >= 1e-4);
        CHECK(simulated_ber(1.0, 1.0, sigma, 1'000'000, 100) == doctest::Approx(expected).epsilon(0.05));
    }
}

TEST_CASE("BER under i.i.d. fading follows the law of total probability") {
    // Log-normal gains, one gain per 1000-bit block.
    const std::size_t blocks = 2000, per_block = 1000;
    const double amplitude = 1.0, sigma = 0.3;
    RngStream data(1), noise(2);
    FadingProcess fading(LogNormalMarginal{0.3}, 0.0, 3);
    std::size_t errors = 0;
    double predicted = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
        const double h = fading.next_gain();
        predicted += theoretical_ber_ook(h, amplitude, sigma);
        const Bits bits = random_bits(data, per_block);
        const std::vector<double> gains(per_block, h);
        const auto rx = demodulate_ook(apply_channel(modulate_ook(bits, amplitude), gains, sigma, noise), gains,
                                       amplitude);
        for (std::size_t i = 0; i < per_block; ++i) errors += bits[i] != rx[i];
    }
    const double simulated = static_cast<double>(errors) / (blocks * per_block);
    CHECK(simulated == doctest::Approx(predicted / blocks).epsilon(0.10));
}

TEST_CASE("fixed-threshold detector") {
    CHECK(demodulate_ook_fixed(std::vector<double>{0.5, 0.51, 0.2}, 1.0) == Bits{0, 1, 0});
    // Deep fade with noise-free reception: ones below A/2 are lost.
    CHECK(theoretical_ber_ook_fixed(0.4, 1.0, 0.0) == 0.5);
    CHECK(theoretical_ber_ook_fixed(1.0, 1.0, 0.0) == 0.0);
    // At h = 1 both detectors coincide.
    CHECK(theoretical_ber_ook_fixed(1.0, 1.0, 0.25) == doctest::Approx(theoretical_ber_ook(1.0, 1.0, 0.25)));

    RngStream data(9), noise(10);
    const std::size_t n = 1'000'000;
    const double h = 0.8, sigma = 0.2;
    const Bits bits = random_bits(data, n);
    const auto y = apply_channel(modulate_ook(bits, 1.0), std::vector<double>(n, h), sigma, noise);
    const auto rx = demodulate_ook_fixed(y, 1.0);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) errors += bits[i] != rx[i];
    CHECK(static_cast<double>(errors) / n == doctest::Approx(theoretical_ber_ook_fixed(h, 1.0, sigma)).epsilon(0.05));
}

TEST_CASE("PhyParams validation") {
    PhyParams p;
    CHECK(p.bit_rate == 248000.0);
    CHECK_NOTHROW(p.validate());
    p.amplitude = 0.0;
    CHECK_THROWS(p.validate());
    p = {};
    p.noise_sigma = -0.1;
    CHECK_THROWS(p.validate());
}
