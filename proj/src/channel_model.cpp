#include "fso/channel_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>

namespace fso {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

}  // namespace

std::string to_string(ModelOverride m) {
    switch (m) {
        case ModelOverride::Auto: return "auto";
        case ModelOverride::LogNormal: return "lognormal";
        case ModelOverride::GammaGamma: return "gammagamma";
        case ModelOverride::None: return "none";
    }
    return "auto";
}

std::string marginal_name(const TurbulenceMarginal& marginal) {
    switch (marginal.index()) {
        case 0: return "lognormal";
        case 1: return "gammagamma";
        default: return "unity";
    }
}

ModelOverride model_override_from_string(const std::string& s) {
    if (s == "auto") return ModelOverride::Auto;
    if (s == "lognormal") return ModelOverride::LogNormal;
    if (s == "gammagamma") return ModelOverride::GammaGamma;
    if (s == "none") return ModelOverride::None;
    throw DomainError("unknown channel model '" + s + "'");
}

void ChannelParams::validate() const {
    require(std::isfinite(cn2) && cn2 >= 0.0, "cn2 must be >= 0");
    require(std::isfinite(wavelength) && wavelength > 100e-9 && wavelength < 20e-6,
            "wavelength must lie in (100 nm, 20 um)");
    require(std::isfinite(distance) && distance > 0.0, "distance must be > 0");
    require(std::isfinite(attenuation) && attenuation >= 0.0, "attenuation must be >= 0");
    require(std::isfinite(wind_speed) && wind_speed > 0.0, "wind_speed must be > 0");
    require(std::isfinite(pointing_jitter_sigma) && pointing_jitter_sigma >= 0.0,
            "pointing_jitter_sigma must be >= 0");
    require(std::isfinite(beam_waist) && beam_waist > 0.0, "beam_waist must be > 0");
    require(std::isfinite(aperture_radius) && aperture_radius > 0.0,
            "aperture_radius must be > 0");
    require(std::isfinite(tick_interval) && tick_interval > 0.0, "tick_interval must be > 0");
}

double rytov_variance(double cn2, double wavelength, double distance) {
    require(wavelength > 0.0, "rytov_variance: wavelength must be > 0");
    require(distance > 0.0, "rytov_variance: distance must be > 0");
    require(cn2 >= 0.0, "rytov_variance: cn2 must be >= 0");
    const double k = 2.0 * std::numbers::pi / wavelength;
    return 1.23 * cn2 * std::pow(k, 7.0 / 6.0) * std::pow(distance, 11.0 / 6.0);
}

GammaGammaShape gamma_gamma_params(double sigma_r_sq) {
    require(sigma_r_sq > 0.0, "gamma_gamma_params: sigma_r_sq must be > 0");
    // sigma^(12/5) with sigma = sqrt(sigma_r_sq)
    const double s125 = std::pow(sigma_r_sq, 6.0 / 5.0);
    const double ea = 0.49 * sigma_r_sq / std::pow(1.0 + 1.11 * s125, 7.0 / 6.0);
    const double eb = 0.51 * sigma_r_sq / std::pow(1.0 + 0.69 * s125, 5.0 / 6.0);
    // expm1 keeps precision in the weak limit; the cap guards the 1/0 end.
    const double alpha = std::min(1.0 / std::expm1(ea), kGammaGammaCap);
    const double beta = std::min(1.0 / std::expm1(eb), kGammaGammaCap);
    return {alpha, beta};
}

double scintillation_index(const TurbulenceMarginal& marginal) {
    struct Visitor {
        double operator()(const LogNormalMarginal& m) const { return std::expm1(m.sigma_ln_sq); }
        double operator()(const GammaGammaMarginal& m) const {
            return 1.0 / m.alpha + 1.0 / m.beta + 1.0 / (m.alpha * m.beta);
        }
        double operator()(const UnityMarginal&) const { return 0.0; }
    };
    return std::visit(Visitor{}, marginal);
}

std::vector<double> gg_quantile_table(double alpha, double beta, std::size_t resolution,
                                      std::uint64_t seed, std::size_t samples) {
    require(alpha > 0.0 && beta > 0.0, "gg_quantile_table: alpha and beta must be > 0");
    require(resolution >= 1024, "gg_quantile_table: resolution must be >= 1024");
    require(samples >= resolution, "gg_quantile_table: need at least one sample per entry");

    RngStream rng(seed);
    std::vector<double> draws(samples);
    for (auto& d : draws) {
        const double x = rng.gamma(alpha) / alpha;
        const double y = rng.gamma(beta) / beta;
        d = x * y;
    }
    std::sort(draws.begin(), draws.end());

    std::vector<double> table(resolution);
    const double n = static_cast<double>(samples);
    for (std::size_t i = 0; i < resolution; ++i) {
        const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(resolution);
        auto idx = static_cast<std::size_t>(p * n);
        table[i] = draws[std::min(idx, samples - 1)];
    }
    return table;
}

void save_quantile_table(const std::filesystem::path& path, const std::vector<double>& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write quantile table " + path.string());
    auto put_u64 = [&](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    };
    put_u64(table.size());
    for (double v : table) put_u64(std::bit_cast<std::uint64_t>(v));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<double> load_quantile_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read quantile table " + path.string());
    auto get_u64 = [&]() {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8))
            throw std::runtime_error("truncated quantile table " + path.string());
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    };
    const std::uint64_t n = get_u64();
    if (n > (std::uint64_t{1} << 32)) throw std::runtime_error("implausible table length");
    std::vector<double> table(n);
    for (auto& v : table) v = std::bit_cast<double>(get_u64());
    return table;
}

std::string quantile_table_cache_name(double alpha, double beta, std::size_t resolution,
                                      std::uint64_t seed) {
    std::ostringstream name;
    name << "gg_" << std::hex << std::bit_cast<std::uint64_t>(alpha) << '_'
         << std::bit_cast<std::uint64_t>(beta) << std::dec << '_' << resolution << '_' << seed
         << ".bin";
    return name.str();
}

namespace {

// Tables are a pure function of their key; building one costs ~2^21 gamma
// draws, so repeated reconfiguration shares them.
std::shared_ptr<const std::vector<double>> shared_table(double alpha, double beta,
                                                        const MarginalOptions& options) {
    using Key = std::tuple<std::uint64_t, std::uint64_t, std::size_t, std::uint64_t>;
    static std::mutex mutex;
    static std::map<Key, std::shared_ptr<const std::vector<double>>> memo;

    const Key key{std::bit_cast<std::uint64_t>(alpha), std::bit_cast<std::uint64_t>(beta),
                  options.table_resolution, options.table_seed};
    {
        std::lock_guard lock(mutex);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
    }

    std::vector<double> table;
    std::filesystem::path cached;
    if (!options.cache_dir.empty()) {
        cached = options.cache_dir /
                 quantile_table_cache_name(alpha, beta, options.table_resolution, options.table_seed);
        if (std::filesystem::exists(cached)) {
            table = load_quantile_table(cached);
            if (table.size() != options.table_resolution) table.clear();
        }
    }
    if (table.empty()) {
        table = gg_quantile_table(alpha, beta, options.table_resolution, options.table_seed);
        if (!cached.empty()) {
            std::filesystem::create_directories(options.cache_dir);
            save_quantile_table(cached, table);
        }
    }

    auto ptr = std::make_shared<const std::vector<double>>(std::move(table));
    std::lock_guard lock(mutex);
    return memo.emplace(key, std::move(ptr)).first->second;
}

}  // namespace

TurbulenceMarginal build_marginal(const ChannelParams& params, const MarginalOptions& options) {
    const double sigma_r_sq = rytov_variance(params.cn2, params.wavelength, params.distance);

    auto lognormal = [&] { return LogNormalMarginal{std::log1p(sigma_r_sq)}; };
    auto gamma_gamma = [&]() -> TurbulenceMarginal {
        const auto [alpha, beta] = gamma_gamma_params(sigma_r_sq);
        return GammaGammaMarginal{alpha, beta, shared_table(alpha, beta, options)};
    };

    switch (params.model_override) {
        case ModelOverride::None: return UnityMarginal{};
        case ModelOverride::LogNormal: return lognormal();
        case ModelOverride::GammaGamma: return gamma_gamma();
        case ModelOverride::Auto: break;
    }
    if (sigma_r_sq == 0.0) return UnityMarginal{};
    if (sigma_r_sq < 1.0) return lognormal();
    return gamma_gamma();
}

double coherence_time(double wind_speed, double wavelength, double distance) {
    require(wind_speed > 0.0, "coherence_time: wind_speed must be > 0");
    require(wavelength > 0.0 && distance > 0.0, "coherence_time: wavelength and distance must be > 0");
    return std::sqrt(wavelength * distance) / wind_speed;
}

double correlation_per_tick(const ChannelParams& params) {
    const double tau = coherence_time(params.wind_speed, params.wavelength, params.distance);
    return std::exp(-params.tick_interval / tau);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double marginal_gain(const TurbulenceMarginal& marginal, double latent) {
    struct Visitor {
        double latent;
        double operator()(const LogNormalMarginal& m) const {
            return std::exp(-0.5 * m.sigma_ln_sq + std::sqrt(m.sigma_ln_sq) * latent);
        }
        double operator()(const GammaGammaMarginal& m) const {
            const auto& table = *m.quantile_table;
            const double n = static_cast<double>(table.size());
            // table[i] sits at probability (i + 0.5) / n
            const double pos = normal_cdf(latent) * n - 0.5;
            if (pos <= 0.0) return table.front();
            if (pos >= n - 1.0) return table.back();
            const auto lo = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(lo);
            return table[lo] + frac * (table[lo + 1] - table[lo]);
        }
        double operator()(const UnityMarginal&) const { return 1.0; }
    };
    return std::max(std::visit(Visitor{latent}, marginal), kMinGain);
}

FadingProcess::FadingProcess(TurbulenceMarginal marginal, double rho, std::uint64_t seed)
    : marginal_(std::move(marginal)), rho_(0.0), innovation_scale_(1.0), latent_(0.0), rng_(seed) {
    reconfigure(marginal_, rho);
    latent_ = rng_.normal();
}

void FadingProcess::reconfigure(TurbulenceMarginal marginal, double rho) {
    require(rho >= 0.0 && rho < 1.0, "FadingProcess: rho must lie in [0, 1)");
    marginal_ = std::move(marginal);
    rho_ = rho;
    innovation_scale_ = std::sqrt(1.0 - rho * rho);
}

double FadingProcess::next_gain() {
    latent_ = rho_ * latent_ + innovation_scale_ * rng_.normal();
    return marginal_gain(marginal_, latent_);
}

double path_loss(double attenuation_db_per_km, double distance) {
    return std::pow(10.0, -attenuation_db_per_km * (distance / 1000.0) / 10.0);
}

PointingGeometry pointing_geometry(double beam_waist, double aperture_radius) {
    require(beam_waist > 0.0 && aperture_radius > 0.0,
            "pointing_geometry: beam_waist and aperture_radius must be > 0");
    const double nu = std::sqrt(std::numbers::pi) * aperture_radius / (std::numbers::sqrt2 * beam_waist);
    const double erf_nu = std::erf(nu);
    const double a0 = erf_nu * erf_nu;
    const double w_eq_sq = beam_waist * beam_waist * std::sqrt(std::numbers::pi) * erf_nu /
                           (2.0 * nu * std::exp(-nu * nu));
    return {a0, w_eq_sq};
}

double pointing_loss_sample(const ChannelParams& params, RngStream& rng) {
    const auto geom = pointing_geometry(params.beam_waist, params.aperture_radius);
    if (params.pointing_jitter_sigma == 0.0) return geom.a0;
    const double r = rng.rayleigh(params.pointing_jitter_sigma);
    return std::max(geom.a0 * std::exp(-2.0 * r * r / geom.w_eq_sq), kMinGain);
}

double pointing_loss_mean(const ChannelParams& params) {
    const auto geom = pointing_geometry(params.beam_waist, params.aperture_radius);
    if (params.pointing_jitter_sigma == 0.0) return geom.a0;
    const double gamma_sq = geom.w_eq_sq / (4.0 * params.pointing_jitter_sigma * params.pointing_jitter_sigma);
    return geom.a0 * gamma_sq / (gamma_sq + 1.0);
}

double composite_gain(double h_l, double h_a, double h_p) { return h_l * h_a * h_p; }

}  // namespace fso
