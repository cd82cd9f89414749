#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "doctest.h"
#include "httplib.h"

#include "fso/cli.hpp"
#include "fso/control_server.hpp"

using namespace fso;

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

SourceData small_source() {
    SourceData s;
    for (std::uint32_t k = 0; k < 100; ++k) s.frames.push_back(synthetic_frame(32, 24, k));
    return s;
}

// 10 s at 10 fps over 200 kb/s, reported every 0.5 s
ScenarioConfig serve_scenario() {
    ScenarioConfig c;
    c.name = "serve-test";
    c.phy.bit_rate = 200e3;
    c.phy.noise_sigma = 0.02;
    c.source.fps = 10;
    c.source.payload_size = 256;
    c.duration = 10.0;
    c.report_interval = 0.5;
    return c;
}

ServeOptions options(double speed) {
    ServeOptions o;
    o.listen = {"127.0.0.1", 0};
    o.speed = speed;
    return o;
}

std::vector<json> parse_lines(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

template <class Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = std::chrono::milliseconds(5000)) {
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return pred();
}

struct Captured {
    int code;
    std::string out, err;
};

Captured run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "fsolink");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    const int code = cli_main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("listen address parsing") {
    CHECK(parse_listen_address("0.0.0.0:9000").host == "0.0.0.0");
    CHECK(parse_listen_address("0.0.0.0:9000").port == 9000);
    CHECK(parse_listen_address(":8081").host == "127.0.0.1");
    CHECK(parse_listen_address("[::1]:80").host == "::1");
    CHECK_THROWS_AS(parse_listen_address("localhost"), ConfigError);
    CHECK_THROWS_AS(parse_listen_address("a:70000"), ConfigError);
    CHECK_THROWS_AS(parse_listen_address("a:"), ConfigError);
}

TEST_CASE("GET /metrics streams every record of the run, then the summary") {
    LinkEngine engine(serve_scenario(), small_source());
    ControlServer server(engine, options(40.0));
    server.start();

    httplib::Client client("127.0.0.1", server.port());
    client.set_read_timeout(10, 0);
    std::string body;
    const auto res = client.Get("/metrics", [&](const char* data, std::size_t n) {
        body.append(data, n);
        return true;
    });
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "application/x-ndjson");
    const auto lines = parse_lines(body);
    REQUIRE(lines.size() == 21);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(lines[i]["t"].get<double>() == doctest::Approx(0.5 * static_cast<double>(i + 1)));
        if (i > 0) CHECK(lines[i]["t"].get<double>() > lines[i - 1]["t"].get<double>());
    }
    CHECK(lines.back().contains("summary"));

    // late subscribers get the full history
    std::string replay;
    client.Get("/metrics", [&](const char* data, std::size_t n) {
        replay.append(data, n);
        return true;
    });
    CHECK(replay == body);

    const auto result = server.wait();
    REQUIRE(result);
    CHECK(result->records.size() == 20);
    // no updates after the run has ended
    const auto late = client.Post("/params", R"({"wind_speed": 2})", "application/json");
    REQUIRE(late);
    CHECK(late->status == 422);
}

TEST_CASE("POST /params, GET /config and GET /frame/latest") {
    LinkEngine engine(serve_scenario(), small_source());
    ControlServer server(engine, options(5.0));
    server.start();
    httplib::Client client("127.0.0.1", server.port());

    const auto bad_json = client.Post("/params", "{\"wind_speed\": ", "application/json");
    REQUIRE(bad_json);
    CHECK(bad_json->status == 400);

    const auto negative = client.Post("/params", R"({"cn2": -1})", "application/json");
    REQUIRE(negative);
    CHECK(negative->status == 422);
    CHECK(json::parse(negative->body)["error"].get<std::string>().find("cn2") != std::string::npos);

    CHECK(client.Post("/params", R"({"seed": 1})", "application/json")->status == 422);
    CHECK(client.Post("/params", "{}", "application/json")->status == 422);
    CHECK(client.Get("/params")->status == 405);
    CHECK(client.Get("/nowhere")->status == 404);

    const auto ok = client.Post("/params", R"({"wind_speed": 6.0})", "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    CHECK(json::parse(ok->body)["applied"]["wind_speed"] == 6.0);

    CHECK(eventually([&] {
        const auto cfg = client.Get("/config");
        return cfg && cfg->status == 200 && json::parse(cfg->body)["channel"]["wind_speed"] == 6.0;
    }));

    REQUIRE(eventually([&] {
        const auto r = client.Get("/frame/latest");
        return r && r->status == 200;
    }));
    const auto frame = client.Get("/frame/latest");
    const auto pgm = decode_pgm(Bytes(frame->body.begin(), frame->body.end()));
    CHECK(pgm.width == 32);
    CHECK(pgm.height == 24);

    // records after the update report the new wind speed
    const auto result = server.wait();
    REQUIRE(result);
    CHECK(result->records.back().params_in_effect.wind_speed == 6.0);
    CHECK(result->records.back().params_in_effect.cn2 == 1e-15);
}

TEST_CASE("WebSocket /ws mirrors records and accepts updates") {
    LinkEngine engine(serve_scenario(), small_source());
    ControlServer server(engine, options(20.0));
    server.start();

    net::io_context ioc;
    tcp::resolver resolver(ioc);
    websocket::stream<tcp::socket> ws(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
    ws.handshake("127.0.0.1", "/ws");
    ws.text(true);
    ws.write(net::buffer(std::string(R"({"wind_speed": 6.0})")));
    ws.write(net::buffer(std::string(R"({"noise_sigma": -3})")));
    ws.write(net::buffer(std::string("not json")));

    std::vector<json> records, acks, errors;
    json summary;
    for (;;) {
        beast::flat_buffer buffer;
        beast::error_code ec;
        ws.read(buffer, ec);
        if (ec) break;
        const auto msg = json::parse(beast::buffers_to_string(buffer.data()));
        if (msg.contains("ack"))
            acks.push_back(msg);
        else if (msg.contains("error"))
            errors.push_back(msg);
        else if (msg.contains("summary"))
            summary = msg;
        else
            records.push_back(msg);
    }
    REQUIRE(acks.size() == 1);
    CHECK(acks[0]["ack"]["wind_speed"] == 6.0);
    REQUIRE(errors.size() == 2);
    CHECK(errors[0]["status"] == 422);
    CHECK(errors[1]["status"] == 400);
    CHECK(records.size() == 20);
    CHECK(summary.contains("summary"));
    CHECK(records.back()["params_in_effect"]["wind_speed"] == 6.0);
}

TEST_CASE("binding a port twice fails") {
    LinkEngine a(serve_scenario(), small_source());
    ControlServer first(a, options(1.0));
    LinkEngine b(serve_scenario(), small_source());
    ServeOptions same = options(1.0);
    same.listen.port = first.port();
    CHECK_THROWS_AS(ControlServer(b, same), BindError);
}

TEST_CASE("command line") {
    const auto dir = std::filesystem::temp_directory_path() / "fso_cli_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    SUBCASE("scenarios lists both wind speeds") {
        const auto r = run_cli({"scenarios"});
        CHECK(r.code == 0);
        CHECK(r.out.find("wind=1 m/s") != std::string::npos);
        CHECK(r.out.find("wind=6 m/s") != std::string::npos);
    }
    SUBCASE("usage errors exit 1 with usage text") {
        const auto r = run_cli({"run", "--config", "x.json", "--frobnicate"});
        CHECK(r.code == 1);
        CHECK(r.err.find("Usage") != std::string::npos);
        CHECK(run_cli({}).code == 1);
        CHECK(run_cli({"run"}).code == 1);
    }
    SUBCASE("missing config exits 2") {
        const auto r = run_cli({"run", "--config", (dir / "absent.json").string()});
        CHECK(r.code == 2);
        CHECK(r.err.find("absent.json") != std::string::npos);
    }
    SUBCASE("invalid config exits 1") {
        std::ofstream(dir / "bad.json") << R"({"schema_version": 1, "duration": -1})";
        CHECK(run_cli({"run", "--config", (dir / "bad.json").string()}).code == 1);
        std::ofstream(dir / "broken.json") << "{";
        CHECK(run_cli({"run", "--config", (dir / "broken.json").string()}).code == 1);
    }
    SUBCASE("run twice gives byte-identical reports") {
        REQUIRE(run_cli({"synth", "--out", (dir / "frames").string(), "--width", "32", "--height", "24", "--count",
                         "20"})
                    .code == 0);
        json cfg = to_json(serve_scenario());
        cfg["duration"] = 1.0;
        cfg["source"]["path"] = "frames";
        std::ofstream(dir / "cfg.json") << cfg.dump(2);
        const auto cfg_path = (dir / "cfg.json").string();
        CHECK(run_cli({"run", "--config", cfg_path, "--seed", "42", "--out", (dir / "a").string()}).code == 0);
        CHECK(run_cli({"run", "--config", cfg_path, "--seed", "42", "--out", (dir / "b").string()}).code == 0);
        CHECK(run_cli({"run", "--config", cfg_path, "--seed", "7", "--out", (dir / "c").string()}).code == 0);
        const auto a = slurp(dir / "a" / "report.jsonl");
        CHECK(!a.empty());
        CHECK(a == slurp(dir / "b" / "report.jsonl"));
        CHECK(a != slurp(dir / "c" / "report.jsonl"));
        CHECK(std::filesystem::exists(dir / "a" / "frames" / "00009.pgm"));
        // frames past duration * fps are not sent
        CHECK_FALSE(std::filesystem::exists(dir / "a" / "frames" / "00010.pgm"));
        const auto stdout_report = run_cli({"run", "--config", cfg_path, "--seed", "42"});
        CHECK(stdout_report.out == a);
    }
    SUBCASE("missing source exits 2") {
        json cfg = to_json(serve_scenario());
        cfg["source"]["path"] = "nowhere";
        std::ofstream(dir / "cfg.json") << cfg.dump();
        CHECK(run_cli({"run", "--config", (dir / "cfg.json").string()}).code == 2);
    }
    std::filesystem::remove_all(dir);
}
