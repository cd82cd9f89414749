#include "fso/control_server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace fso {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

ListenAddress parse_listen_address(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError("listen address must be host:port, got '" + text + "'");
    ListenAddress out;
    std::string host = text.substr(0, colon);
    if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
    if (!host.empty()) out.host = host;
    const std::string port = text.substr(colon + 1);
    if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string::npos ||
        std::stoul(port) > 65535)
        throw ConfigError("invalid port in listen address '" + text + "'");
    out.port = static_cast<std::uint16_t>(std::stoul(port));
    return out;
}

namespace {

using Line = std::shared_ptr<const std::string>;

class Subscriber {
public:
    virtual ~Subscriber() = default;
    /// Called with the hub lock held; must not block. Returns false once the
    /// connection is gone so the hub can drop it.
    virtual bool push(Line line, bool last) = 0;
};

// Read-only snapshot channel from the engine thread to network sessions.
class Hub final : public EngineObserver {
public:
    Hub(const ScenarioConfig& config, const SourceData& source) : config_(to_json(config)) {
        if (source.mode == SourceMode::Pgm && !source.frames.empty())
            dims_ = {source.frames.front().width, source.frames.front().height};
    }

    void on_record(const MetricsRecord& r) override {
        publish(std::make_shared<const std::string>(to_json(r).dump()), false);
    }

    void on_frame(std::size_t, std::span<const std::uint8_t> bytes, bool) override {
        if (!dims_) return;
        auto frame = std::make_shared<const VideoFrame>(
            VideoFrame{dims_->first, dims_->second, Bytes(bytes.begin(), bytes.end())});
        std::lock_guard lock(mutex_);
        latest_ = std::move(frame);
    }

    void on_config(const ScenarioConfig& c) override {
        json j = to_json(c);
        std::lock_guard lock(mutex_);
        config_ = std::move(j);
    }

    void finish(const RunSummary& summary) {
        publish(std::make_shared<const std::string>(json{{"summary", to_json(summary)}}.dump()), true);
    }

    /// Registers for live lines and returns everything published so far,
    /// atomically with respect to publish().
    std::vector<Line> subscribe(const std::shared_ptr<Subscriber>& s, bool& finished) {
        std::lock_guard lock(mutex_);
        finished = finished_;
        if (!finished_) subscribers_.push_back(s);
        return history_;
    }

    json config() const {
        std::lock_guard lock(mutex_);
        return config_;
    }

    std::shared_ptr<const VideoFrame> latest_frame() const {
        std::lock_guard lock(mutex_);
        return latest_;
    }

    bool finished() const {
        std::lock_guard lock(mutex_);
        return finished_;
    }

private:
    void publish(Line line, bool last) {
        std::lock_guard lock(mutex_);
        history_.push_back(line);
        finished_ = finished_ || last;
        std::erase_if(subscribers_, [&](const auto& s) { return !s->push(line, last) || last; });
    }

    mutable std::mutex mutex_;
    json config_;
    std::optional<std::pair<std::uint32_t, std::uint32_t>> dims_;
    std::shared_ptr<const VideoFrame> latest_;
    std::vector<Line> history_;
    std::vector<std::shared_ptr<Subscriber>> subscribers_;
    bool finished_ = false;
};

struct Context {
    LinkEngine& engine;
    Hub& hub;
    std::atomic<int>& open_streams;  // /metrics and /ws sessions alive
};

class StreamCount {
public:
    explicit StreamCount(std::atomic<int>& n) : n_(n) { ++n_; }
    ~StreamCount() { --n_; }
    StreamCount(const StreamCount&) = delete;
    StreamCount& operator=(const StreamCount&) = delete;

private:
    std::atomic<int>& n_;
};

struct UpdateReply {
    http::status status;
    json body;
};

UpdateReply process_update(Context& ctx, const json& j) {
    if (ctx.hub.finished()) return {http::status::unprocessable_entity, {{"error", "run has finished"}}};
    ParamUpdate u;
    try {
        u = param_update_from_json(j);
    } catch (const ConfigError& e) {
        return {http::status::unprocessable_entity, {{"error", e.what()}}};
    }
    const auto ack = ctx.engine.submit_update(u);
    if (!ack.accepted) return {http::status::unprocessable_entity, {{"error", ack.reason}}};
    return {http::status::ok, {{"applied", to_json(u)}}};
}

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response handle(const Request& req, Context& ctx) {
    const auto reply = [&](http::status status, std::string body, const char* type) {
        Response res{status, req.version()};
        res.set(http::field::server, "fsolink");
        res.set(http::field::content_type, type);
        res.set(http::field::access_control_allow_origin, "*");
        res.keep_alive(req.keep_alive());
        res.body() = std::move(body);
        res.prepare_payload();
        return res;
    };
    const auto error = [&](http::status status, const std::string& what) {
        return reply(status, json{{"error", what}}.dump(), "application/json");
    };
    const std::string_view target(req.target().data(), req.target().size());
    const std::string_view path = target.substr(0, target.find('?'));

    if (req.method() == http::verb::options) {
        auto res = reply(http::status::no_content, "", "text/plain");
        res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
        res.set(http::field::access_control_allow_headers, "Content-Type");
        return res;
    }
    if (path == "/params") {
        if (req.method() != http::verb::post) return error(http::status::method_not_allowed, "use POST");
        const json j = json::parse(req.body(), nullptr, false);
        if (j.is_discarded()) return error(http::status::bad_request, "malformed JSON");
        const auto r = process_update(ctx, j);
        return reply(r.status, r.body.dump(), "application/json");
    }
    const bool get = req.method() == http::verb::get || req.method() == http::verb::head;
    if (path == "/config") {
        if (!get) return error(http::status::method_not_allowed, "use GET");
        return reply(http::status::ok, ctx.hub.config().dump(2) + "\n", "application/json");
    }
    if (path == "/frame/latest") {
        if (!get) return error(http::status::method_not_allowed, "use GET");
        const auto frame = ctx.hub.latest_frame();
        if (!frame) return error(http::status::not_found, "no frame received yet");
        const Bytes pgm = encode_pgm(*frame);
        return reply(http::status::ok, std::string(pgm.begin(), pgm.end()), "image/x-portable-graymap");
    }
    if (path == "/metrics" || path == "/ws") return error(http::status::method_not_allowed, "use GET");
    return error(http::status::not_found, "no such resource");
}

class MetricsStream final : public Subscriber, public std::enable_shared_from_this<MetricsStream> {
public:
    MetricsStream(beast::tcp_stream stream, Context& ctx)
        : count_(ctx.open_streams), stream_(std::move(stream)), ctx_(ctx) {}

    void run(unsigned version) {
        res_ = {http::status::ok, version};
        res_.set(http::field::server, "fsolink");
        res_.set(http::field::content_type, "application/x-ndjson");
        res_.set(http::field::cache_control, "no-cache");
        res_.set(http::field::access_control_allow_origin, "*");
        res_.keep_alive(false);
        res_.chunked(true);
        serializer_.emplace(res_);
        stream_.expires_never();
        http::async_write_header(stream_, *serializer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return;
            bool finished = false;
            const auto history = self->ctx_.hub.subscribe(self, finished);
            for (std::size_t i = 0; i < history.size(); ++i)
                self->enqueue(history[i], finished && i + 1 == history.size());
        });
    }

    bool push(Line line, bool last) override {
        if (failed_) return false;
        net::post(stream_.get_executor(),
                  [self = shared_from_this(), line = std::move(line), last] { self->enqueue(line, last); });
        return true;
    }

private:
    void enqueue(const Line& line, bool last) {
        if (failed_) return;
        queue_.push_back(*line + "\n");
        closing_ = closing_ || last;
        if (!writing_) write_next();
    }

    void write_next() {
        if (queue_.empty()) {
            if (closing_) {
                writing_ = true;
                net::async_write(stream_, http::make_chunk_last(), [self = shared_from_this()](beast::error_code, std::size_t) {
                    beast::error_code ignored;
                    self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                });
            }
            return;
        }
        writing_ = true;
        net::async_write(stream_, http::make_chunk(net::buffer(queue_.front())),
                         [self = shared_from_this()](beast::error_code ec, std::size_t) {
                             self->writing_ = false;
                             if (ec) {
                                 self->failed_ = true;
                                 return;
                             }
                             self->queue_.pop_front();
                             self->write_next();
                         });
    }

    StreamCount count_;
    beast::tcp_stream stream_;
    Context& ctx_;
    http::response<http::empty_body> res_;
    std::optional<http::response_serializer<http::empty_body>> serializer_;
    std::deque<std::string> queue_;
    bool writing_ = false;
    bool closing_ = false;
    std::atomic<bool> failed_{false};
};

class WsSession final : public Subscriber, public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, Context& ctx) : count_(ctx.open_streams), ws_(std::move(socket)), ctx_(ctx) {}

    void run(Request req) {
        req_ = std::move(req);
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req_, [self = shared_from_this()](beast::error_code ec) {
            if (ec) return;
            self->ws_.text(true);
            bool finished = false;
            const auto history = self->ctx_.hub.subscribe(self, finished);
            for (std::size_t i = 0; i < history.size(); ++i)
                self->enqueue(history[i], finished && i + 1 == history.size());
            self->read();
        });
    }

    bool push(Line line, bool last) override {
        if (failed_) return false;
        net::post(ws_.get_executor(),
                  [self = shared_from_this(), line = std::move(line), last] { self->enqueue(line, last); });
        return true;
    }

private:
    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->failed_ = true;
                return;
            }
            const std::string text = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            const json j = json::parse(text, nullptr, false);
            json reply;
            if (j.is_discarded()) {
                reply = {{"error", "malformed JSON"}, {"status", 400}};
            } else {
                const auto r = process_update(self->ctx_, j);
                reply = r.status == http::status::ok ? json{{"ack", r.body.at("applied")}}
                                                     : json{{"error", r.body.at("error")}, {"status", static_cast<int>(r.status)}};
            }
            self->enqueue(std::make_shared<const std::string>(reply.dump()), false);
            self->read();
        });
    }

    void enqueue(const Line& line, bool last) {
        if (failed_ || closed_) return;
        queue_.push_back(line);
        closing_ = closing_ || last;
        if (!writing_) write_next();
    }

    void write_next() {
        if (queue_.empty()) {
            if (closing_ && !closed_) {
                closed_ = true;
                writing_ = true;
                ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
            }
            return;
        }
        writing_ = true;
        ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->writing_ = false;
            if (ec) {
                self->failed_ = true;
                return;
            }
            self->queue_.pop_front();
            self->write_next();
        });
    }

    StreamCount count_;
    websocket::stream<beast::tcp_stream> ws_;
    Context& ctx_;
    Request req_;
    beast::flat_buffer buffer_;
    std::deque<Line> queue_;
    bool writing_ = false;
    bool closing_ = false;
    bool closed_ = false;
    std::atomic<bool> failed_{false};
};

class HttpSession final : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, Context& ctx) : stream_(std::move(socket)), ctx_(ctx) {}

    void run() { read(); }

private:
    void read() {
        req_ = {};
        stream_.expires_after(std::chrono::seconds(60));
        http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->on_read(ec);
        });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            return;
        }
        const std::string_view target(req_.target().data(), req_.target().size());
        const std::string_view path = target.substr(0, target.find('?'));
        if (websocket::is_upgrade(req_) && path == "/ws") {
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), ctx_)->run(std::move(req_));
            return;
        }
        if (path == "/metrics" && req_.method() == http::verb::get) {
            std::make_shared<MetricsStream>(std::move(stream_), ctx_)->run(req_.version());
            return;
        }
        auto res = std::make_shared<Response>(handle(req_, ctx_));
        if (req_.method() == http::verb::head) res->body().clear();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (res->need_eof()) {
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                return;
            }
            self->read();
        });
    }

    beast::tcp_stream stream_;
    Context& ctx_;
    beast::flat_buffer buffer_;
    Request req_;
};

}  // namespace

struct ControlServer::Impl {
    Impl(LinkEngine& e, ServeOptions o)
        : engine(e), options(std::move(o)), hub(e.config(), e.source()), ctx{e, hub, open_streams}, acceptor(ioc) {
        if (!(options.speed > 0.0)) throw ConfigError("speed must be > 0");
        beast::error_code ec;
        tcp::resolver resolver(ioc);
        const auto endpoints = resolver.resolve(options.listen.host, std::to_string(options.listen.port), ec);
        if (ec || endpoints.empty())
            throw BindError("cannot resolve '" + options.listen.host + "': " + ec.message());
        const tcp::endpoint endpoint = *endpoints.begin();
        acceptor.open(endpoint.protocol(), ec);
        if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
        if (!ec) acceptor.bind(endpoint, ec);
        if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
        if (ec)
            throw BindError("cannot listen on " + options.listen.host + ":" + std::to_string(options.listen.port) +
                            ": " + ec.message());
        engine.set_observer(&hub);
    }

    void accept() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (!ec) std::make_shared<HttpSession>(std::move(socket), ctx)->run();
            if (acceptor.is_open()) accept();
        });
    }

    void engine_loop() {
        using clock = std::chrono::steady_clock;
        const auto start = clock::now();
        const double tick = engine.config().channel.tick_interval;
        while (!engine.done() && !stopping) {
            engine.step();
            const double wall = static_cast<double>(engine.tick()) * tick / options.speed;
            std::this_thread::sleep_until(start + std::chrono::duration_cast<clock::duration>(
                                                      std::chrono::duration<double>(wall)));
        }
        if (!engine.done()) {
            std::lock_guard lock(done_mutex);
            done = true;
            done_cv.notify_all();
            return;
        }
        RunResult r = engine.finish();
        hub.finish(r.summary);
        std::lock_guard lock(done_mutex);
        result = std::move(r);
        done = true;
        done_cv.notify_all();
    }

    LinkEngine& engine;
    ServeOptions options;
    std::atomic<int> open_streams{0};
    Hub hub;
    Context ctx;
    net::io_context ioc;
    tcp::acceptor acceptor;
    std::thread io_thread;
    std::thread engine_thread;
    std::atomic<bool> stopping{false};
    bool started = false;

    std::mutex done_mutex;
    std::condition_variable done_cv;
    bool done = false;
    std::optional<RunResult> result;
};

ControlServer::ControlServer(LinkEngine& engine, ServeOptions options)
    : impl_(std::make_unique<Impl>(engine, std::move(options))) {}

ControlServer::~ControlServer() {
    stop();
    impl_->engine.set_observer(nullptr);
}

std::uint16_t ControlServer::port() const noexcept { return impl_->acceptor.local_endpoint().port(); }

void ControlServer::start() {
    if (impl_->started) return;
    impl_->started = true;
    impl_->accept();
    impl_->io_thread = std::thread([this] { impl_->ioc.run(); });
    impl_->engine_thread = std::thread([this] { impl_->engine_loop(); });
}

std::optional<RunResult> ControlServer::wait() {
    std::unique_lock lock(impl_->done_mutex);
    impl_->done_cv.wait(lock, [&] { return impl_->done || !impl_->started; });
    return impl_->result;
}

bool ControlServer::finished() const { return impl_->hub.finished(); }

void ControlServer::stop() {
    impl_->stopping = true;
    if (impl_->engine_thread.joinable()) impl_->engine_thread.join();
    if (impl_->hub.finished()) {
        // let streams flush the summary and close themselves
        const auto limit = std::chrono::steady_clock::now() + std::chrono::seconds(2);
        while (impl_->open_streams > 0 && std::chrono::steady_clock::now() < limit)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    net::post(impl_->ioc, [this] {
        beast::error_code ignored;
        impl_->acceptor.close(ignored);
    });
    impl_->ioc.stop();
    if (impl_->io_thread.joinable()) impl_->io_thread.join();
    std::lock_guard lock(impl_->done_mutex);
    impl_->done = true;
    impl_->done_cv.notify_all();
}

}  // namespace fso
