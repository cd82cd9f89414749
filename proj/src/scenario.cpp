#include "fso/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "fso/transport_video.hpp"

namespace fso {

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> names(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items()) {
        if (!names.contains(key)) throw ConfigError(where + ": unknown field '" + key + "'");
    }
}

double number(const json& obj, const char* key, double fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return v.get<double>();
}

std::optional<double> optional_number(const json& obj, const char* key) {
    if (!obj.contains(key)) return std::nullopt;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
    return v.get<double>();
}

std::string text(const json& obj, const char* key, const std::string& fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

std::uint64_t unsigned_integer(const json& obj, const char* key, std::uint64_t fallback,
                               const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError(where + "." + key + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

}  // namespace

void ParamUpdate::validate() const {
    auto finite = [](const std::optional<double>& v) { return !v || std::isfinite(*v); };
    require(finite(cn2) && finite(wind_speed) && finite(attenuation_db_per_km) &&
                finite(pointing_jitter_sigma) && finite(noise_sigma),
            "update values must be finite");
    require(!cn2 || *cn2 >= 0.0, "cn2 must be >= 0");
    require(!wind_speed || *wind_speed > 0.0, "wind_speed must be > 0");
    require(!attenuation_db_per_km || *attenuation_db_per_km >= 0.0, "attenuation_db_per_km must be >= 0");
    require(!pointing_jitter_sigma || *pointing_jitter_sigma >= 0.0, "pointing_jitter_sigma must be >= 0");
    require(!noise_sigma || *noise_sigma >= 0.0, "noise_sigma must be >= 0");
}

void ScenarioConfig::validate() const {
    try {
        channel.validate();
        phy.validate();
        fso::validate(fec);
        interleaver.validate();
        check_payload_size(source.payload_size);
        // Construction checks that the code and interleaver can be aligned.
        UnitCodec(fec, interleaver, source.payload_size);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    require(std::isfinite(source.fps) && source.fps > 0.0, "source.fps must be > 0");
    require(std::isfinite(duration) && duration > 0.0, "duration must be > 0");
    require(std::isfinite(report_interval) && report_interval > 0.0 && report_interval <= duration,
            "report_interval must lie in (0, duration]");
    require(report_interval >= channel.tick_interval, "report_interval must span at least one tick");
    for (const auto& s : updates) {
        require(std::isfinite(s.at) && s.at >= 0.0, "scheduled update time must be >= 0");
        s.update.validate();
    }
}

LiveParams live_params(const ScenarioConfig& config) {
    return {config.channel.cn2, config.channel.wind_speed, config.channel.attenuation,
            config.channel.pointing_jitter_sigma, config.phy.noise_sigma};
}

void apply_to(ScenarioConfig& config, const ParamUpdate& u) {
    if (u.cn2) config.channel.cn2 = *u.cn2;
    if (u.wind_speed) config.channel.wind_speed = *u.wind_speed;
    if (u.attenuation_db_per_km) config.channel.attenuation = *u.attenuation_db_per_km;
    if (u.pointing_jitter_sigma) config.channel.pointing_jitter_sigma = *u.pointing_jitter_sigma;
    if (u.noise_sigma) config.phy.noise_sigma = *u.noise_sigma;
}

json psnr_to_json(double db) {
    if (std::isinf(db)) return "inf";
    return db;
}

json to_json(const LiveParams& p) {
    return {{"cn2", p.cn2},
            {"wind_speed", p.wind_speed},
            {"attenuation_db_per_km", p.attenuation_db_per_km},
            {"pointing_jitter_sigma", p.pointing_jitter_sigma},
            {"noise_sigma", p.noise_sigma}};
}

json to_json(const MetricsRecord& r) {
    json j = json::object();
    j["t"] = r.t;
    j["h_mean"] = r.h_mean;
    j["h_min"] = r.h_min;
    j["ber_pre_fec"] = r.ber_pre_fec;
    j["ber_post_fec"] = r.ber_post_fec;
    j["packets_ok"] = r.packets_ok;
    j["packets_lost"] = r.packets_lost;
    j["psnr_db"] = r.psnr_db ? psnr_to_json(*r.psnr_db) : json(nullptr);
    j["params_in_effect"] = to_json(r.params_in_effect);
    return j;
}

json to_json(const ParamUpdate& u) {
    json j = json::object();
    if (u.cn2) j["cn2"] = *u.cn2;
    if (u.wind_speed) j["wind_speed"] = *u.wind_speed;
    if (u.attenuation_db_per_km) j["attenuation_db_per_km"] = *u.attenuation_db_per_km;
    if (u.pointing_jitter_sigma) j["pointing_jitter_sigma"] = *u.pointing_jitter_sigma;
    if (u.noise_sigma) j["noise_sigma"] = *u.noise_sigma;
    return j;
}

json to_json(const ScenarioConfig& c) {
    json fec = {{"scheme", to_string(c.fec)},
                {"interleaver_rows", c.interleaver.rows},
                {"interleaver_cols", c.interleaver.cols}};
    if (const auto* rep = std::get_if<Repetition>(&c.fec)) fec["repetition_factor"] = rep->r;

    json updates = json::array();
    for (const auto& s : c.updates) {
        json u = to_json(s.update);
        u["at"] = s.at;
        updates.push_back(u);
    }
    return {{"schema_version", kSchemaVersion},
            {"name", c.name},
            {"channel",
             {{"cn2", c.channel.cn2},
              {"wavelength", c.channel.wavelength},
              {"distance", c.channel.distance},
              {"attenuation_db_per_km", c.channel.attenuation},
              {"wind_speed", c.channel.wind_speed},
              {"pointing_jitter_sigma", c.channel.pointing_jitter_sigma},
              {"beam_waist", c.channel.beam_waist},
              {"aperture_radius", c.channel.aperture_radius},
              {"tick_interval", c.channel.tick_interval},
              {"model", to_string(c.channel.model_override)}}},
            {"phy",
             {{"amplitude", c.phy.amplitude},
              {"noise_sigma", c.phy.noise_sigma},
              {"bit_rate", c.phy.bit_rate},
              {"threshold", c.phy.threshold == ThresholdMode::Csi ? "csi" : "fixed"}}},
            {"fec", fec},
            {"source",
             {{"mode", c.source.mode == SourceMode::Pgm ? "pgm" : "opaque"},
              {"path", c.source.path.generic_string()},
              {"fps", c.source.fps},
              {"payload_size", c.source.payload_size}}},
            {"duration", c.duration},
            {"seed", c.seed},
            {"report_interval", c.report_interval},
            {"updates", updates}};
}

ParamUpdate param_update_from_json(const json& j) {
    check_keys(j, "update",
               {"cn2", "wind_speed", "attenuation_db_per_km", "pointing_jitter_sigma", "noise_sigma"});
    ParamUpdate u;
    u.cn2 = optional_number(j, "cn2");
    u.wind_speed = optional_number(j, "wind_speed");
    u.attenuation_db_per_km = optional_number(j, "attenuation_db_per_km");
    u.pointing_jitter_sigma = optional_number(j, "pointing_jitter_sigma");
    u.noise_sigma = optional_number(j, "noise_sigma");
    if (u.empty()) throw ConfigError("update: no fields given");
    u.validate();
    return u;
}

ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
    check_keys(j, "config",
               {"schema_version", "name", "channel", "phy", "fec", "source", "duration", "seed",
                "report_interval", "updates"});
    if (!j.contains("schema_version") || j.at("schema_version") != kSchemaVersion)
        throw ConfigError("config: schema_version must be " + std::to_string(kSchemaVersion));

    ScenarioConfig c;
    c.name = text(j, "name", c.name, "config");

    if (j.contains("channel")) {
        const auto& ch = j.at("channel");
        check_keys(ch, "channel",
                   {"cn2", "wavelength", "distance", "attenuation_db_per_km", "wind_speed",
                    "pointing_jitter_sigma", "beam_waist", "aperture_radius", "tick_interval", "model"});
        auto& p = c.channel;
        p.cn2 = number(ch, "cn2", p.cn2, "channel");
        p.wavelength = number(ch, "wavelength", p.wavelength, "channel");
        p.distance = number(ch, "distance", p.distance, "channel");
        p.attenuation = number(ch, "attenuation_db_per_km", p.attenuation, "channel");
        p.wind_speed = number(ch, "wind_speed", p.wind_speed, "channel");
        p.pointing_jitter_sigma = number(ch, "pointing_jitter_sigma", p.pointing_jitter_sigma, "channel");
        p.beam_waist = number(ch, "beam_waist", p.beam_waist, "channel");
        p.aperture_radius = number(ch, "aperture_radius", p.aperture_radius, "channel");
        p.tick_interval = number(ch, "tick_interval", p.tick_interval, "channel");
        try {
            p.model_override = model_override_from_string(text(ch, "model", "auto", "channel"));
        } catch (const DomainError& e) {
            throw ConfigError(std::string("channel.model: ") + e.what());
        }
    }

    if (j.contains("phy")) {
        const auto& ph = j.at("phy");
        check_keys(ph, "phy", {"amplitude", "noise_sigma", "bit_rate", "threshold"});
        c.phy.amplitude = number(ph, "amplitude", c.phy.amplitude, "phy");
        c.phy.noise_sigma = number(ph, "noise_sigma", c.phy.noise_sigma, "phy");
        c.phy.bit_rate = number(ph, "bit_rate", c.phy.bit_rate, "phy");
        const auto mode = text(ph, "threshold", "csi", "phy");
        if (mode == "csi")
            c.phy.threshold = ThresholdMode::Csi;
        else if (mode == "fixed")
            c.phy.threshold = ThresholdMode::Fixed;
        else
            throw ConfigError("phy.threshold: expected \"csi\" or \"fixed\"");
    }

    if (j.contains("fec")) {
        const auto& f = j.at("fec");
        check_keys(f, "fec", {"scheme", "repetition_factor", "interleaver_rows", "interleaver_cols"});
        const auto scheme = text(f, "scheme", "hamming74", "fec");
        if (scheme == "none")
            c.fec = NoFec{};
        else if (scheme == "hamming74")
            c.fec = Hamming74{};
        else if (scheme == "repetition")
            c.fec = Repetition{static_cast<unsigned>(unsigned_integer(f, "repetition_factor", 3, "fec"))};
        else
            throw ConfigError("fec.scheme: expected none, repetition or hamming74");
        c.interleaver.rows = unsigned_integer(f, "interleaver_rows", c.interleaver.rows, "fec");
        c.interleaver.cols = unsigned_integer(f, "interleaver_cols", c.interleaver.cols, "fec");
    }

    if (j.contains("source")) {
        const auto& s = j.at("source");
        check_keys(s, "source", {"mode", "path", "fps", "payload_size"});
        const auto mode = text(s, "mode", "pgm", "source");
        if (mode == "pgm")
            c.source.mode = SourceMode::Pgm;
        else if (mode == "opaque")
            c.source.mode = SourceMode::Opaque;
        else
            throw ConfigError("source.mode: expected \"pgm\" or \"opaque\"");
        std::filesystem::path path = text(s, "path", "", "source");
        if (!path.empty() && path.is_relative() && !base_dir.empty()) path = base_dir / path;
        c.source.path = path;
        c.source.fps = number(s, "fps", c.source.fps, "source");
        c.source.payload_size = unsigned_integer(s, "payload_size", c.source.payload_size, "source");
    }

    c.duration = number(j, "duration", c.duration, "config");
    c.seed = unsigned_integer(j, "seed", c.seed, "config");
    c.report_interval = number(j, "report_interval", c.report_interval, "config");

    if (j.contains("updates")) {
        const auto& list = j.at("updates");
        if (!list.is_array()) throw ConfigError("updates: expected an array");
        for (const auto& item : list) {
            if (!item.is_object() || !item.contains("at")) throw ConfigError("updates: each entry needs \"at\"");
            json fields = item;
            const double at = number(item, "at", 0.0, "updates");
            fields.erase("at");
            c.updates.push_back({at, param_update_from_json(fields)});
        }
    }

    c.validate();
    return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::filesystem::filesystem_error("cannot open config", path, std::make_error_code(std::errc::no_such_file_or_directory));
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return scenario_from_json(j, path.parent_path());
}

namespace {

ScenarioConfig canonical_base() {
    ScenarioConfig c;
    c.channel.wavelength = 1550e-9;
    c.channel.distance = 1000.0;
    c.channel.attenuation = 0.5;
    c.channel.pointing_jitter_sigma = 0.01;
    c.channel.beam_waist = 0.10;
    c.channel.aperture_radius = 0.05;
    c.channel.tick_interval = 1e-3;
    c.phy.amplitude = 1.0;
    c.phy.noise_sigma = 0.03;
    // Desk-scale raw 192x108 @ 60 fps with Hamming(7,4) needs about 18.6 Mb/s.
    c.phy.bit_rate = 25e6;
    c.fec = Hamming74{};
    c.interleaver = {64, 7};
    c.source = {SourceMode::Pgm, "frames", 60.0, 1024};
    c.duration = 10.0;
    c.seed = 42;
    c.report_interval = 0.5;
    return c;
}

}  // namespace

ScenarioConfig canonical_low_scenario() {
    auto c = canonical_base();
    c.name = "low-turbulence";
    c.channel.cn2 = 1e-15;
    c.channel.wind_speed = 1.0;
    return c;
}

ScenarioConfig canonical_high_scenario() {
    auto c = canonical_base();
    c.name = "high-turbulence";
    c.channel.cn2 = 5e-14;
    c.channel.wind_speed = 6.0;
    return c;
}

}  // namespace fso
