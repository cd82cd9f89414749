#include "fso/link_engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace fso {

SourceData load_source(const SourceConfig& source) {
    SourceData data;
    data.mode = source.mode;
    if (source.mode == SourceMode::Pgm) {
        data.frames = load_frame_sequence(source.path);
        return data;
    }
    std::ifstream in(source.path, std::ios::binary);
    if (!in) throw std::filesystem::filesystem_error("cannot open source", source.path,
                                                     std::make_error_code(std::errc::no_such_file_or_directory));
    data.opaque.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return data;
}

json to_json(const RunSummary& s) {
    const auto& m = s.transport;
    json psnr = json::array();
    for (double db : m.psnr_per_frame) psnr.push_back(psnr_to_json(db));
    const auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    return {{"ticks", s.ticks},
            {"duration", s.duration},
            {"bits_sent", m.bits_sent},
            {"bit_errors_pre_fec", m.bit_errors_pre_fec},
            {"bit_errors_post_fec", m.bit_errors_post_fec},
            {"post_fec_bits", s.post_fec_bits},
            {"ber_pre_fec", ratio(m.bit_errors_pre_fec, m.bits_sent)},
            {"ber_post_fec", ratio(m.bit_errors_post_fec, s.post_fec_bits)},
            {"packets_sent", m.packets_sent},
            {"packets_lost", m.packets_lost},
            {"frames_total", m.frames_delivered + m.frames_concealed},
            {"frames_delivered", m.frames_delivered},
            {"frames_concealed", m.frames_concealed},
            {"psnr_per_frame", psnr}};
}

namespace {

std::size_t count_scheduled(const ScenarioConfig& config, const SourceData& source) {
    if (source.mode == SourceMode::Opaque) return 1;
    // frame k becomes available at k / fps; only those inside the run are sent
    const auto within = static_cast<std::size_t>(std::ceil(config.duration * config.source.fps - 1e-9));
    return std::min(source.frames.size(), within);
}

StreamLayout make_layout(const ScenarioConfig& config, const SourceData& source) {
    std::vector<std::size_t> lengths;
    if (source.mode == SourceMode::Opaque) {
        lengths.push_back(source.opaque.size());
    } else {
        const std::size_t n = count_scheduled(config, source);
        for (std::size_t k = 0; k < n; ++k) lengths.push_back(source.frames[k].pixels.size());
    }
    return StreamLayout(std::move(lengths), config.source.payload_size);
}

const ScenarioConfig& validated(const ScenarioConfig& config) {
    config.validate();
    return config;
}

std::uint64_t bit_errors(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += static_cast<std::uint64_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
    return n;
}

MarginalOptions with_seed(MarginalOptions options, std::uint64_t master) {
    options.table_seed = derive_stream_seed(master, StreamId::QuantileTable);
    return options;
}

}  // namespace

LinkEngine::LinkEngine(ScenarioConfig config, SourceData source, MarginalOptions table_options)
    : config_(validated(config)),
      source_(std::move(source)),
      table_options_(with_seed(std::move(table_options), config_.seed)),
      codec_(config_.fec, config_.interleaver, config_.source.payload_size),
      layout_(make_layout(config_, source_)),
      segmenter_(config_.source.payload_size,
                 source_.mode == SourceMode::Pgm ? frame_flags::kRawFrames : std::uint8_t{0}),
      reassembler_(layout_),
      scheduled_units_(layout_.frame_count()),
      fading_(build_marginal(config_.channel, table_options_), correlation_per_tick(config_.channel),
              derive_stream_seed(config_.seed, StreamId::Fading)),
      pointing_rng_(derive_stream_seed(config_.seed, StreamId::Pointing)),
      noise_rng_(derive_stream_seed(config_.seed, StreamId::Noise)) {
    if (source_.mode == SourceMode::Pgm) {
        if (source_.frames.empty()) throw ConfigError("source has no frames");
    }
    path_gain_ = path_loss(config_.channel.attenuation, config_.channel.distance);
    total_ticks_ = static_cast<std::uint64_t>(std::llround(config_.duration / config_.channel.tick_interval));
    if (total_ticks_ == 0) total_ticks_ = 1;

    idle_unit_.plain.assign(codec_.unit_bytes(), 0);
    idle_unit_.coded.assign(codec_.coded_bits(), 0);
    rx_bits_.reserve(codec_.coded_bits());

    scheduled_updates_ = config_.updates;
    std::stable_sort(scheduled_updates_.begin(), scheduled_updates_.end(),
                     [](const auto& a, const auto& b) { return a.at < b.at; });

    totals_.packets_sent = layout_.packet_count();
    received_.resize(layout_.frame_count());
    totals_.psnr_per_frame.assign(layout_.frame_count(), 0.0);
    totals_summary_.duration = config_.duration;
}

UpdateAck LinkEngine::submit_update(const ParamUpdate& update) {
    UpdateAck ack;
    ack.update = update;
    if (update.empty()) {
        ack.reason = "no fields given";
        return ack;
    }
    try {
        update.validate();
    } catch (const ConfigError& e) {
        ack.reason = e.what();
        return ack;
    }
    std::lock_guard lock(updates_mutex_);
    queued_updates_.push_back(update);
    ack.accepted = true;
    return ack;
}

void LinkEngine::apply_update(const ParamUpdate& update) {
    const bool turbulence = update.cn2 || update.wind_speed;
    apply_to(config_, update);
    if (turbulence) rebuild_channel();
    if (update.attenuation_db_per_km) path_gain_ = path_loss(config_.channel.attenuation, config_.channel.distance);
}

void LinkEngine::rebuild_channel() {
    fading_.reconfigure(build_marginal(config_.channel, table_options_), correlation_per_tick(config_.channel));
}

void LinkEngine::apply_pending_updates(double t) {
    // scripted updates first, then live ones, each in arrival order
    const double eps = 1e-9 * config_.channel.tick_interval;
    bool changed = false;
    while (next_scheduled_ < scheduled_updates_.size() && scheduled_updates_[next_scheduled_].at <= t + eps) {
        apply_update(scheduled_updates_[next_scheduled_++].update);
        changed = true;
    }

    std::deque<ParamUpdate> live;
    {
        std::lock_guard lock(updates_mutex_);
        live.swap(queued_updates_);
    }
    for (const auto& u : live) apply_update(u);
    if ((changed || !live.empty()) && observer_) observer_->on_config(config_);
}

void LinkEngine::release_source_units(double t) {
    if (source_.mode == SourceMode::Opaque) {
        if (released_units_ == 0) {
            segmenter_.push_unit(0, source_.opaque);
            segmenter_.flush();
            released_units_ = 1;
        }
        return;
    }
    const double eps = 1e-9;
    while (released_units_ < scheduled_units_ &&
           static_cast<double>(released_units_) / config_.source.fps <= t + eps) {
        segmenter_.push_unit(static_cast<std::uint32_t>(released_units_), source_.frames[released_units_].pixels);
        ++released_units_;
    }
    if (released_units_ == scheduled_units_) segmenter_.flush();
}

LinkEngine::TxUnit LinkEngine::next_tx_unit() {
    if (!segmenter_.has_packet()) return idle_unit_;
    const Packet p = segmenter_.pop_packet();
    const Bytes frame = frame_pack(p.seq, p.flags, p.payload);
    TxUnit unit;
    unit.plain = codec_.wrap(frame);
    unit.coded = interleave(codec_.interleaver(), fec_encode(codec_.scheme(), bytes_to_bits(unit.plain)));
    unit.data = true;
    return unit;
}

void LinkEngine::transmit(std::size_t nbits, double h) {
    while (nbits > 0) {
        if (!current_) {
            current_ = next_tx_unit();
            current_offset_ = 0;
            rx_bits_.clear();
        }
        const std::size_t take = std::min(nbits, current_->coded.size() - current_offset_);
        const auto tx = std::span<const std::uint8_t>(current_->coded).subspan(current_offset_, take);

        const auto symbols = modulate_ook(tx, config_.phy.amplitude);
        const std::vector<double> gains(take, h);
        const auto samples = apply_channel(symbols, gains, config_.phy.noise_sigma, noise_rng_);
        const Bits rx = config_.phy.threshold == ThresholdMode::Csi
                            ? demodulate_ook(samples, gains, config_.phy.amplitude)
                            : demodulate_ook_fixed(samples, config_.phy.amplitude);

        const std::uint64_t errors = bit_errors(tx, rx);
        interval_.pre_errors += errors;
        interval_.bits += take;
        totals_.bit_errors_pre_fec += errors;
        totals_.bits_sent += take;

        rx_bits_.insert(rx_bits_.end(), rx.begin(), rx.end());
        current_offset_ += take;
        nbits -= take;
        if (current_offset_ == current_->coded.size()) complete_unit();
    }
}

void LinkEngine::complete_unit() {
    auto decoded = codec_.decode(rx_bits_);
    const TxUnit unit = std::move(*current_);
    current_.reset();

    const std::uint64_t post = bit_errors(bytes_to_bits(unit.plain), bytes_to_bits(decoded.unit));
    interval_.post_bits += unit.plain.size() * 8;
    interval_.post_errors += post;
    totals_summary_.post_fec_bits += unit.plain.size() * 8;
    totals_.bit_errors_post_fec += post;

    const Frame* frame = std::get_if<Frame>(&decoded.frame);
    if (unit.data) {
        ++(frame ? interval_.packets_ok : interval_.packets_lost);
    }
    // Receiver side: only frames that pass every integrity check are used.
    if (frame) deliver(reassembler_.accept(frame->seq, std::span<const std::uint8_t>(frame->payload)));
}

void LinkEngine::deliver(std::vector<Reassembler::Completed> frames) {
    for (auto& c : frames) {
        const std::span<const std::uint8_t> reference =
            source_.mode == SourceMode::Pgm ? std::span<const std::uint8_t>(source_.frames[c.index].pixels)
                                            : std::span<const std::uint8_t>(source_.opaque);
        const double mse = mean_squared_error(reference, c.bytes);
        totals_.psnr_per_frame[c.index] = psnr_from_mse(mse);
        ++(c.concealed ? totals_.frames_concealed : totals_.frames_delivered);
        interval_.mse_sum += mse;
        ++interval_.frames;
        if (observer_) observer_->on_frame(c.index, c.bytes, c.concealed);
        received_[c.index] = std::move(c.bytes);
    }
}

MetricsRecord LinkEngine::close_interval(double t) {
    MetricsRecord r;
    r.t = t;
    r.h_mean = interval_.ticks ? interval_.h_sum / static_cast<double>(interval_.ticks) : 0.0;
    r.h_min = interval_.h_min;
    r.ber_pre_fec = interval_.bits ? static_cast<double>(interval_.pre_errors) / static_cast<double>(interval_.bits) : 0.0;
    r.ber_post_fec = interval_.post_bits
                         ? static_cast<double>(interval_.post_errors) / static_cast<double>(interval_.post_bits)
                         : 0.0;
    r.packets_ok = interval_.packets_ok;
    r.packets_lost = interval_.packets_lost;
    if (interval_.frames > 0) r.psnr_db = psnr_from_mse(interval_.mse_sum / static_cast<double>(interval_.frames));
    r.params_in_effect = live_params(config_);
    interval_ = {};
    ++records_emitted_;
    records_.push_back(r);
    if (observer_) observer_->on_record(r);
    return r;
}

std::optional<MetricsRecord> LinkEngine::step() {
    if (done()) return std::nullopt;
    const double tick = config_.channel.tick_interval;
    const double t = static_cast<double>(tick_) * tick;

    apply_pending_updates(t);
    release_source_units(t);

    const double h_a = fading_.next_gain();
    const double h_p = pointing_loss_sample(config_.channel, pointing_rng_);
    const double h = std::max(composite_gain(path_gain_, h_a, h_p), kMinGain);

    bit_carry_ += config_.phy.bit_rate * tick;
    const double whole = std::floor(bit_carry_);
    bit_carry_ -= whole;
    transmit(static_cast<std::size_t>(whole), h);

    interval_.h_min = interval_.ticks ? std::min(interval_.h_min, h) : h;
    interval_.h_sum += h;
    ++interval_.ticks;

    ++tick_;
    const double t_end = static_cast<double>(tick_) * tick;
    const double next_report = static_cast<double>(records_emitted_ + 1) * config_.report_interval;
    if (t_end >= next_report - 1e-9 * tick || done()) return close_interval(t_end);
    return std::nullopt;
}

RunResult LinkEngine::finish() {
    if (!done()) throw std::logic_error("LinkEngine::finish called before the last tick");
    if (!finished_) {
        deliver(reassembler_.finish());
        totals_.packets_lost = reassembler_.packets_lost();
        totals_summary_.ticks = tick_;
        // Frames never completed are concealed entirely.
        finished_ = true;
    }
    return {records_, totals_summary_, received_};
}

RunResult run_scenario(const ScenarioConfig& config, const SourceData& source, EngineObserver* observer,
                       MarginalOptions table_options) {
    LinkEngine engine(config, source, std::move(table_options));
    engine.set_observer(observer);
    while (!engine.done()) engine.step();
    return engine.finish();
}

std::string render_report(const RunResult& result) {
    std::string out;
    for (const auto& r : result.records) {
        out += to_json(r).dump();
        out += '\n';
    }
    out += json{{"summary", to_json(result.summary)}}.dump();
    out += '\n';
    return out;
}

void write_outputs(const std::filesystem::path& dir, const RunResult& result, const SourceData& source) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream report(dir / "report.jsonl", std::ios::binary | std::ios::trunc);
        const auto text = render_report(result);
        report.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!report) throw std::filesystem::filesystem_error("write failed", dir / "report.jsonl",
                                                             std::make_error_code(std::errc::io_error));
    }
    write_received(dir, result, source);
}

void write_received(const std::filesystem::path& dir, const RunResult& result, const SourceData& source) {
    std::filesystem::create_directories(dir);
    if (source.mode == SourceMode::Opaque) {
        std::ofstream out(dir / "received.bin", std::ios::binary | std::ios::trunc);
        if (!result.received.empty())
            out.write(reinterpret_cast<const char*>(result.received[0].data()),
                      static_cast<std::streamsize>(result.received[0].size()));
        if (!out) throw std::filesystem::filesystem_error("write failed", dir / "received.bin",
                                                          std::make_error_code(std::errc::io_error));
        return;
    }
    const auto frames_dir = dir / "frames";
    std::filesystem::create_directories(frames_dir);
    const auto& ref = source.frames.front();
    for (std::size_t k = 0; k < result.received.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.pgm", k);
        write_pgm(frames_dir / name, VideoFrame{ref.width, ref.height, result.received[k]});
    }
}

}  // namespace fso
