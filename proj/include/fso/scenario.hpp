#pragma once

// Scenario configuration, live parameter updates and metrics records, with
// their JSON forms (schema_version 1).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "fso/channel_model.hpp"
#include "fso/fec_framing.hpp"
#include "fso/phy.hpp"

namespace fso {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SourceMode { Pgm, Opaque };

struct SourceConfig {
    SourceMode mode = SourceMode::Pgm;
    std::filesystem::path path;
    double fps = 60.0;
    std::size_t payload_size = 1024;
};

/// Subset of live-tunable values. Unset fields are left unchanged.
struct ParamUpdate {
    std::optional<double> cn2;
    std::optional<double> wind_speed;
    std::optional<double> attenuation_db_per_km;
    std::optional<double> pointing_jitter_sigma;
    std::optional<double> noise_sigma;

    bool empty() const noexcept {
        return !cn2 && !wind_speed && !attenuation_db_per_km && !pointing_jitter_sigma && !noise_sigma;
    }
    /// Throws ConfigError naming the first invalid field.
    void validate() const;
};

/// An update scripted to apply at the first tick boundary with t >= at.
struct ScheduledUpdate {
    double at = 0.0;
    ParamUpdate update;
};

struct ScenarioConfig {
    std::string name = "custom";
    ChannelParams channel;
    PhyParams phy;
    FecScheme fec = Hamming74{};
    Interleaver interleaver;
    SourceConfig source;
    double duration = 10.0;
    std::uint64_t seed = 42;
    double report_interval = 0.5;
    std::vector<ScheduledUpdate> updates;

    void validate() const;
};

/// The live-tunable values in effect during an interval.
struct LiveParams {
    double cn2 = 0.0;
    double wind_speed = 0.0;
    double attenuation_db_per_km = 0.0;
    double pointing_jitter_sigma = 0.0;
    double noise_sigma = 0.0;

    bool operator==(const LiveParams&) const = default;
};

LiveParams live_params(const ScenarioConfig& config);
void apply_to(ScenarioConfig& config, const ParamUpdate& update);

struct MetricsRecord {
    double t = 0.0;
    double h_mean = 0.0;
    double h_min = 0.0;
    double ber_pre_fec = 0.0;
    double ber_post_fec = 0.0;
    std::uint64_t packets_ok = 0;
    std::uint64_t packets_lost = 0;
    std::optional<double> psnr_db;  // nullopt when no frame completed; +inf lossless
    LiveParams params_in_effect;
};

// JSON conversion. Doubles that may be infinite are written as "inf".
json psnr_to_json(double db);
json to_json(const LiveParams& p);
json to_json(const MetricsRecord& r);
json to_json(const ParamUpdate& u);
json to_json(const ScenarioConfig& c);

ParamUpdate param_update_from_json(const json& j);
/// Relative source paths are resolved against `base_dir`.
ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Canonical channel conditions of the demonstration: low turbulence with
/// 1 m/s wind and high turbulence with 6 m/s wind, on a desk-scale source.
ScenarioConfig canonical_low_scenario();
ScenarioConfig canonical_high_scenario();

}  // namespace fso
