#pragma once

// Live control endpoint for one LinkEngine run, HTTP/1.1 and WebSocket on a
// single port:
//   POST /params        ParamUpdate JSON -> 200 {"applied": ...}, 400 or 422 {"error": ...}
//   GET  /metrics       NDJSON MetricsRecord stream (history, then live), ends with {"summary": ...}
//   GET  /ws            WebSocket upgrade; same records outbound, ParamUpdate JSON inbound
//   GET  /frame/latest  most recent received frame as binary PGM
//   GET  /config        effective config including applied updates

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "fso/link_engine.hpp"

namespace fso {

class BindError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ListenAddress {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;
};

/// Parses "host:port" or ":port". Throws ConfigError.
ListenAddress parse_listen_address(const std::string& text);

struct ServeOptions {
    ListenAddress listen;
    /// Simulated seconds per wall-clock second; pacing is best effort.
    double speed = 1.0;
};

class ControlServer {
public:
    /// Binds immediately; throws BindError. The engine must outlive the server
    /// and is driven only by the server's engine thread after start().
    ControlServer(LinkEngine& engine, ServeOptions options);
    ~ControlServer();

    ControlServer(const ControlServer&) = delete;
    ControlServer& operator=(const ControlServer&) = delete;

    std::uint16_t port() const noexcept;

    void start();
    /// Blocks until the run completes; nullopt if stopped first.
    std::optional<RunResult> wait();
    bool finished() const;
    /// Stops the engine thread and closes all connections.
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fso
