#pragma once

// Tick-driven end-to-end link:
//   source -> segment -> frame -> FEC/interleave -> OOK -> channel
//          -> detect -> deinterleave/FEC -> unframe -> reassemble -> sink
// One engine owns all mutable simulation state. Other threads interact only
// through submit_update() and the observer callbacks.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fso/channel_model.hpp"
#include "fso/fec_framing.hpp"
#include "fso/phy.hpp"
#include "fso/scenario.hpp"
#include "fso/transport_video.hpp"

namespace fso {

struct SourceData {
    SourceMode mode = SourceMode::Pgm;
    std::vector<VideoFrame> frames;  // Pgm
    Bytes opaque;                    // Opaque
};

/// Reads the frames or bytes the source config points at.
SourceData load_source(const SourceConfig& source);

struct UpdateAck {
    bool accepted = false;
    std::string reason;
    ParamUpdate update;
};

/// Receives engine output on the engine's thread.
class EngineObserver {
public:
    virtual ~EngineObserver() = default;
    virtual void on_record(const MetricsRecord&) {}
    virtual void on_frame(std::size_t /*index*/, std::span<const std::uint8_t> /*bytes*/, bool /*concealed*/) {}
    /// Called after live or scheduled updates changed the effective config.
    virtual void on_config(const ScenarioConfig&) {}
};

struct RunSummary {
    std::uint64_t ticks = 0;
    double duration = 0.0;
    std::uint64_t post_fec_bits = 0;  // plain bits checked after decoding
    TransportMetrics transport;
};

json to_json(const RunSummary& s);

struct RunResult {
    std::vector<MetricsRecord> records;
    RunSummary summary;
    std::vector<Bytes> received;  // one entry per source unit, in order
};

class LinkEngine {
public:
    LinkEngine(ScenarioConfig config, SourceData source, MarginalOptions table_options = {});

    /// Validates and queues a live update; it takes effect at the next tick
    /// boundary. Safe to call from any thread.
    UpdateAck submit_update(const ParamUpdate& update);

    void set_observer(EngineObserver* observer) { observer_ = observer; }

    bool done() const noexcept { return tick_ >= total_ticks_; }
    std::uint64_t tick() const noexcept { return tick_; }
    std::uint64_t total_ticks() const noexcept { return total_ticks_; }

    /// Advances one tick. Returns the record whose interval ended here.
    std::optional<MetricsRecord> step();

    /// Flushes the receiver after the last tick; call once when done().
    RunResult finish();

    const ScenarioConfig& config() const noexcept { return config_; }
    const SourceData& source() const noexcept { return source_; }
    const FadingProcess& fading() const noexcept { return fading_; }
    std::size_t source_units() const noexcept { return scheduled_units_; }
    /// Bits pushed through the PHY so far.
    std::uint64_t bits_sent() const noexcept { return totals_.bits_sent; }

private:
    struct TxUnit {
        Bits coded;
        Bytes plain;
        bool data = false;
    };

    struct Interval {
        std::uint64_t ticks = 0;
        double h_sum = 0.0;
        double h_min = 0.0;
        std::uint64_t bits = 0;
        std::uint64_t pre_errors = 0;
        std::uint64_t post_bits = 0;
        std::uint64_t post_errors = 0;
        std::uint64_t packets_ok = 0;
        std::uint64_t packets_lost = 0;
        double mse_sum = 0.0;
        std::uint64_t frames = 0;
    };

    void apply_pending_updates(double t);
    void apply_update(const ParamUpdate& update);
    void rebuild_channel();
    void release_source_units(double t);
    TxUnit next_tx_unit();
    void transmit(std::size_t nbits, double h);
    void complete_unit();
    void deliver(std::vector<Reassembler::Completed> frames);
    MetricsRecord close_interval(double t);

    ScenarioConfig config_;
    SourceData source_;
    MarginalOptions table_options_;
    UnitCodec codec_;
    StreamLayout layout_;
    Segmenter segmenter_;
    Reassembler reassembler_;
    std::size_t scheduled_units_ = 0;
    std::size_t released_units_ = 0;

    FadingProcess fading_;
    RngStream pointing_rng_;
    RngStream noise_rng_;
    double path_gain_ = 1.0;

    std::optional<TxUnit> current_;
    std::size_t current_offset_ = 0;
    Bits rx_bits_;
    TxUnit idle_unit_;

    std::uint64_t tick_ = 0;
    std::uint64_t total_ticks_ = 0;
    double bit_carry_ = 0.0;
    std::size_t records_emitted_ = 0;
    Interval interval_;

    std::mutex updates_mutex_;
    std::deque<ParamUpdate> queued_updates_;
    std::vector<ScheduledUpdate> scheduled_updates_;  // sorted by time
    std::size_t next_scheduled_ = 0;

    EngineObserver* observer_ = nullptr;

    RunSummary totals_summary_;
    TransportMetrics& totals_ = totals_summary_.transport;
    std::vector<MetricsRecord> records_;
    std::vector<Bytes> received_;
    bool finished_ = false;
};

/// Runs a scenario to completion in the calling thread.
RunResult run_scenario(const ScenarioConfig& config, const SourceData& source,
                       EngineObserver* observer = nullptr, MarginalOptions table_options = {});

/// One JSON object per record, then {"summary": ...}; newline-terminated.
std::string render_report(const RunResult& result);

/// Writes received frames as dir/frames/NNNNN.pgm, or dir/received.bin for
/// opaque sources.
void write_received(const std::filesystem::path& dir, const RunResult& result, const SourceData& source);

/// Writes report.jsonl plus the received output.
void write_outputs(const std::filesystem::path& dir, const RunResult& result, const SourceData& source);

}  // namespace fso
