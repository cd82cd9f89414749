#pragma once

// Statistical atmospheric channel: h = h_l * h_a * h_p, i.e. deterministic
// path loss, turbulence fading and pointing-error loss. Wind speed enters only
// through the temporal correlation of the fading process.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fso/rng.hpp"

namespace fso {

class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ModelOverride { Auto, LogNormal, GammaGamma, None };

std::string to_string(ModelOverride m);
ModelOverride model_override_from_string(const std::string& s);

struct ChannelParams {
    double cn2 = 1e-15;                   // m^(-2/3)
    double wavelength = 1550e-9;          // m
    double distance = 1000.0;             // m
    double attenuation = 0.5;             // dB/km
    double wind_speed = 1.0;              // m/s
    double pointing_jitter_sigma = 0.01;  // m
    double beam_waist = 0.10;             // m, beam radius at the receiver
    double aperture_radius = 0.05;        // m
    double tick_interval = 1e-3;          // s
    ModelOverride model_override = ModelOverride::Auto;

    /// Throws DomainError naming the first violated bound.
    void validate() const;
};

/// Mean-one log-normal: ln I ~ Normal(-sigma_ln_sq / 2, sigma_ln_sq).
struct LogNormalMarginal {
    double sigma_ln_sq = 0.0;
};

/// Product of two unit-mean Gamma variates. `quantile_table` holds the
/// empirical quantile function at probabilities (i + 0.5) / size.
struct GammaGammaMarginal {
    double alpha = 1.0;
    double beta = 1.0;
    std::shared_ptr<const std::vector<double>> quantile_table;
};

struct UnityMarginal {};

using TurbulenceMarginal = std::variant<LogNormalMarginal, GammaGammaMarginal, UnityMarginal>;

/// Sigma_R^2 = 1.23 Cn^2 k^(7/6) L^(11/6), k = 2 pi / lambda.
double rytov_variance(double cn2, double wavelength, double distance);

struct GammaGammaShape {
    double alpha;
    double beta;
};

inline constexpr double kGammaGammaCap = 1e6;

/// Plane-wave Gamma-Gamma parameters; both capped at kGammaGammaCap.
GammaGammaShape gamma_gamma_params(double sigma_r_sq);

double scintillation_index(const TurbulenceMarginal& marginal);
/// "lognormal", "gammagamma" or "unity".
std::string marginal_name(const TurbulenceMarginal& marginal);

inline constexpr std::size_t kDefaultTableResolution = 65536;
inline constexpr std::size_t kDefaultTableSamples = std::size_t{1} << 20;

/// Empirical quantile table of X*Y, X ~ Gamma(alpha, 1/alpha),
/// Y ~ Gamma(beta, 1/beta), from `samples` seeded draws.
std::vector<double> gg_quantile_table(double alpha, double beta, std::size_t resolution,
                                      std::uint64_t seed,
                                      std::size_t samples = kDefaultTableSamples);

/// Binary cache: u64 little-endian length followed by that many
/// little-endian IEEE-754 doubles.
void save_quantile_table(const std::filesystem::path& path, const std::vector<double>& table);
std::vector<double> load_quantile_table(const std::filesystem::path& path);
std::string quantile_table_cache_name(double alpha, double beta, std::size_t resolution,
                                      std::uint64_t seed);

/// Options for marginal construction. When `cache_dir` is non-empty,
/// Gamma-Gamma tables are read from / written to it.
struct MarginalOptions {
    std::size_t table_resolution = kDefaultTableResolution;
    std::uint64_t table_seed = 0;
    std::filesystem::path cache_dir;
};

TurbulenceMarginal build_marginal(const ChannelParams& params, const MarginalOptions& options = {});

/// tau_c = sqrt(lambda * L) / v (Fresnel-scale eddy under frozen flow).
double coherence_time(double wind_speed, double wavelength, double distance);

/// AR(1) coefficient per tick: exp(-tick_interval / tau_c).
double correlation_per_tick(const ChannelParams& params);

/// Standard normal CDF.
double normal_cdf(double x);

/// Maps a standard-normal latent value to a fading gain (Gaussian copula).
/// Nondecreasing in `latent`.
double marginal_gain(const TurbulenceMarginal& marginal, double latent);

/// Correlated turbulence fading. Single-owner mutable state.
class FadingProcess {
public:
    /// The latent starts at a stationary N(0, 1) draw from the stream.
    FadingProcess(TurbulenceMarginal marginal, double rho, std::uint64_t seed);

    /// Advances one tick and returns h_a > 0.
    double next_gain();

    /// Replaces marginal and correlation; the latent state is preserved.
    void reconfigure(TurbulenceMarginal marginal, double rho);

    double latent() const noexcept { return latent_; }
    double rho() const noexcept { return rho_; }
    const TurbulenceMarginal& marginal() const noexcept { return marginal_; }

private:
    TurbulenceMarginal marginal_;
    double rho_;
    double innovation_scale_;
    double latent_;
    RngStream rng_;
};

/// Deterministic loss 10^(-attenuation * km / 10).
double path_loss(double attenuation_db_per_km, double distance);

/// Geometry of the Gaussian-beam pointing-loss model.
struct PointingGeometry {
    double a0;          // fraction of power collected at zero displacement
    double w_eq_sq;     // equivalent beam width squared, m^2
};

PointingGeometry pointing_geometry(double beam_waist, double aperture_radius);

/// h_p = A0 exp(-2 r^2 / w_eq^2), r ~ Rayleigh(pointing_jitter_sigma).
double pointing_loss_sample(const ChannelParams& params, RngStream& rng);

/// Closed-form mean of the pointing loss, A0 gamma^2 / (gamma^2 + 1).
double pointing_loss_mean(const ChannelParams& params);

double composite_gain(double h_l, double h_a, double h_p);

/// Gains entering the PHY are floored here.
inline constexpr double kMinGain = 1e-12;

}  // namespace fso
