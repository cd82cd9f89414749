#include "fso/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"

#include "fso/control_server.hpp"
#include "fso/link_engine.hpp"

namespace fso {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Streams records to report.jsonl as they are produced so an aborted run
// still leaves a partial report behind.
class ReportWriter final : public EngineObserver {
public:
    explicit ReportWriter(const std::filesystem::path& dir) : path_(dir / "report.jsonl") {
        std::filesystem::create_directories(dir);
        out_.open(path_, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError(path_.string() + ": cannot open for writing");
    }

    void on_record(const MetricsRecord& r) override { write(to_json(r).dump()); }

    void summary(const RunSummary& s) { write(json{{"summary", to_json(s)}}.dump()); }

private:
    void write(const std::string& line) {
        out_ << line << '\n';
        out_.flush();
        if (!out_) throw IoError(path_.string() + ": write failed");
    }

    std::filesystem::path path_;
    std::ofstream out_;
};

ScenarioConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    auto config = load_scenario(path);
    if (seed) config.seed = *seed;
    return config;
}

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::optional<std::string>& out_dir) {
    const auto config = load_config(config_path, seed);
    const auto source = load_source(config.source);
    if (!out_dir) {
        std::cout << render_report(run_scenario(config, source));
        return kExitOk;
    }
    ReportWriter writer(*out_dir);
    const auto result = run_scenario(config, source, &writer);
    writer.summary(result.summary);
    write_received(*out_dir, result, source);
    std::cout << json{{"summary", to_json(result.summary)}}.dump() << '\n';
    return kExitOk;
}

int cmd_serve(const std::string& config_path, const std::string& listen, const std::optional<std::uint64_t>& seed,
              double speed, const std::optional<std::string>& out_dir, bool exit_on_finish) {
    const auto config = load_config(config_path, seed);
    ServeOptions options;
    options.listen = parse_listen_address(listen);
    options.speed = speed;
    LinkEngine engine(config, load_source(config.source));
    ControlServer server(engine, options);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.start();
    std::cout << "listening on http://" << options.listen.host << ":" << server.port() << std::endl;

    bool reported = false;
    while (!g_interrupted) {
        if (!reported && server.finished()) {
            reported = true;
            const auto result = server.wait();
            if (result && out_dir) write_outputs(*out_dir, *result, engine.source());
            std::cout << "run finished" << std::endl;
            if (exit_on_finish) break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    server.stop();
    return kExitOk;
}

int cmd_scenarios(bool as_json) {
    for (const auto& c : {canonical_low_scenario(), canonical_high_scenario()}) {
        if (as_json) {
            std::cout << to_json(c).dump() << '\n';
            continue;
        }
        const auto& ch = c.channel;
        const double srs = rytov_variance(ch.cn2, ch.wavelength, ch.distance);
        char line[256];
        std::snprintf(line, sizeof line, "%-16s cn2=%-6g wind=%g m/s  sigma_R^2=%.4g  tau_c=%.3g ms  model=%s\n",
                      c.name.c_str(), ch.cn2, ch.wind_speed, srs,
                      1e3 * coherence_time(ch.wind_speed, ch.wavelength, ch.distance),
                      marginal_name(build_marginal(ch)).c_str());
        std::cout << line;
    }
    return kExitOk;
}

int cmd_synth(const std::string& out_dir, std::uint32_t width, std::uint32_t height, std::uint32_t count) {
    std::filesystem::create_directories(out_dir);
    for (std::uint32_t k = 0; k < count; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "%05u.pgm", k);
        write_pgm(std::filesystem::path(out_dir) / name, synthetic_frame(width, height, k));
    }
    std::cout << "wrote " << count << " frames to " << out_dir << '\n';
    return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Free-space optical link emulator", "fsolink"};
    app.require_subcommand(1);

    std::string config_path, listen;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    double speed = 1.0;
    bool exit_on_finish = false, as_json = false;
    std::string synth_dir;
    std::uint32_t width = 192, height = 108, count = 600;

    auto* run = app.add_subcommand("run", "Run a scenario as fast as possible and write its outputs");
    run->add_option("--config", config_path, "Scenario JSON file")->required();
    run->add_option("--seed", seed, "Override the master seed");
    run->add_option("--out", out_dir, "Output directory (report.jsonl and received frames); stdout report if omitted");

    auto* serve = app.add_subcommand("serve", "Run a scenario in real time behind the control API");
    serve->add_option("--config", config_path, "Scenario JSON file")->required();
    serve->add_option("--listen", listen, "Bind address host:port")->required();
    serve->add_option("--seed", seed, "Override the master seed");
    serve->add_option("--speed", speed, "Simulated seconds per wall-clock second")->check(CLI::PositiveNumber);
    serve->add_option("--out", out_dir, "Write outputs here when the run finishes");
    serve->add_flag("--exit-on-finish", exit_on_finish, "Exit once the run completes");

    auto* scenarios = app.add_subcommand("scenarios", "List the canonical channel scenarios");
    scenarios->add_flag("--json", as_json, "Print full configs as JSON lines");

    auto* synth = app.add_subcommand("synth", "Write the synthetic PGM test sequence");
    synth->add_option("--out", synth_dir, "Output directory")->required();
    synth->add_option("--width", width)->check(CLI::Range(1u, 1u << 15));
    synth->add_option("--height", height)->check(CLI::Range(1u, 1u << 15));
    synth->add_option("--count", count)->check(CLI::Range(1u, 1u << 20));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitValidation;
    }

    try {
        if (*run) return cmd_run(config_path, seed, out_dir);
        if (*serve) return cmd_serve(config_path, listen, seed, speed, out_dir, exit_on_finish);
        if (*scenarios) return cmd_scenarios(as_json);
        if (*synth) return cmd_synth(synth_dir, width, height, count);
    } catch (const ConfigError& e) {
        std::cerr << "fsolink: invalid configuration: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "fsolink: invalid configuration: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "fsolink: " << e.what() << '\n';
        return kExitIo;
    } catch (const VideoError& e) {
        std::cerr << "fsolink: " << e.what() << '\n';
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "fsolink: " << e.what() << '\n';
        return kExitIo;
    } catch (const BindError& e) {
        std::cerr << "fsolink: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitValidation;
}

}  // namespace fso
