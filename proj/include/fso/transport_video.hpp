#pragma once

// Raw-video source and sink: PGM frame sequences, segmentation into
// transport packets, reassembly with freeze-frame concealment, and
// distortion metrics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fso/fec_framing.hpp"

namespace fso {

struct VideoFrame {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    Bytes pixels;  // 8-bit grayscale, row-major

    bool operator==(const VideoFrame&) const = default;
};

class VideoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary PGM (P5, maxval 255).
VideoFrame decode_pgm(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
Bytes encode_pgm(const VideoFrame& frame);
VideoFrame read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const VideoFrame& frame);

/// All *.pgm files in `dir`, lexicographic order, equal dimensions.
std::vector<VideoFrame> load_frame_sequence(const std::filesystem::path& dir);

/// Moving gradient with a sweeping bar; deterministic per index.
VideoFrame synthetic_frame(std::uint32_t width, std::uint32_t height, std::uint32_t index);

inline constexpr std::size_t kMinPayloadSize = 64;
inline constexpr std::size_t kFramePrefixSize = 8;  // frame index u32 BE, byte length u32 BE

struct Packet {
    std::uint32_t seq = 0;
    std::uint8_t flags = 0;
    Bytes payload;

    bool operator==(const Packet&) const = default;
};

/// Byte layout of a segmented stream: each source unit (a video frame, or
/// the whole opaque blob) is prefixed with 8 bytes and concatenated.
class StreamLayout {
public:
    StreamLayout(std::vector<std::size_t> frame_lengths, std::size_t payload_size);

    std::size_t frame_count() const noexcept { return lengths_.size(); }
    std::size_t frame_length(std::size_t k) const { return lengths_.at(k); }
    /// Offset of frame k's prefix in the stream.
    std::size_t frame_offset(std::size_t k) const { return offsets_.at(k); }
    std::size_t stream_length() const noexcept { return total_; }
    std::size_t payload_size() const noexcept { return payload_size_; }
    std::size_t packet_count() const noexcept;
    /// Last sequence number whose payload overlaps frame k.
    std::uint32_t last_packet_of_frame(std::size_t k) const;

private:
    std::vector<std::size_t> lengths_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
    std::size_t payload_size_;
};

void check_payload_size(std::size_t payload_size);

Bytes frame_prefix(std::uint32_t index, std::uint32_t length);

std::vector<Packet> segment(std::span<const VideoFrame> frames, std::size_t payload_size);
std::vector<Packet> segment(std::span<const std::uint8_t> opaque, std::size_t payload_size);

/// Incremental packetizer: bytes are appended as source units become
/// available; full packets are released as soon as they are complete.
class Segmenter {
public:
    Segmenter(std::size_t payload_size, std::uint8_t flags);

    void push_unit(std::uint32_t index, std::span<const std::uint8_t> bytes);
    /// Emits the trailing short packet, if any.
    void flush();
    bool has_packet() const noexcept { return !ready_.empty(); }
    Packet pop_packet();
    std::uint32_t packets_emitted() const noexcept { return next_seq_; }

private:
    void cut(std::size_t n);

    std::size_t payload_size_;
    std::uint8_t flags_;
    Bytes pending_;
    std::vector<Packet> ready_;
    std::size_t ready_head_ = 0;
    std::uint32_t next_seq_ = 0;
};

struct TransportMetrics {
    std::uint64_t bits_sent = 0;
    std::uint64_t bit_errors_pre_fec = 0;
    std::uint64_t bit_errors_post_fec = 0;
    std::uint64_t packets_sent = 0;
    std::uint64_t packets_lost = 0;
    std::uint64_t frames_delivered = 0;
    std::uint64_t frames_concealed = 0;
    std::vector<double> psnr_per_frame;  // +inf when lossless
};

inline constexpr std::uint8_t kConcealFill = 128;

/// Receiver-side reassembly. Packets must be offered in nondecreasing seq
/// order; skipped sequence numbers are treated as lost. Lost byte ranges are
/// filled from the co-located bytes of the last fully delivered frame, or
/// with mid-gray when there is none.
class Reassembler {
public:
    explicit Reassembler(StreamLayout layout);

    struct Completed {
        std::size_t index;
        Bytes bytes;
        bool concealed;
    };

    /// `payload` empty optional marks the packet as lost. Returns the frames
    /// that became final.
    std::vector<Completed> accept(std::uint32_t seq, std::optional<std::span<const std::uint8_t>> payload);
    /// Marks every outstanding packet lost and finalizes the rest.
    std::vector<Completed> finish();

    std::uint64_t packets_ok() const noexcept { return packets_ok_; }
    std::uint64_t packets_lost() const noexcept { return packets_lost_; }
    const StreamLayout& layout() const noexcept { return layout_; }

private:
    void mark(std::uint32_t seq, std::optional<std::span<const std::uint8_t>> payload);
    std::vector<Completed> finalize_through(std::int64_t last_seq_accounted);

    StreamLayout layout_;
    Bytes stream_;
    std::vector<std::uint8_t> present_;  // per stream byte
    std::uint32_t next_seq_ = 0;
    std::size_t next_frame_ = 0;
    Bytes last_good_;
    bool have_good_ = false;
    std::uint64_t packets_ok_ = 0;
    std::uint64_t packets_lost_ = 0;
};

struct ReceivedPacket {
    std::uint32_t seq = 0;
    std::optional<Bytes> payload;  // nullopt = lost (CRC failure or never arrived)
};

struct ReassemblyResult {
    std::vector<Bytes> frames;
    TransportMetrics metrics;
};

/// Batch form: offers every packet in order, then finishes. Packet-level
/// and frame-level counts are filled in; bit counts are left at zero.
ReassemblyResult reassemble(const StreamLayout& layout, std::span<const ReceivedPacket> packets);

inline constexpr double kLosslessPsnr = std::numeric_limits<double>::infinity();

double mean_squared_error(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> received);
/// 10 log10(255^2 / MSE); +inf when identical.
double psnr(const VideoFrame& reference, const VideoFrame& received);
double psnr_from_mse(double mse);

}  // namespace fso
