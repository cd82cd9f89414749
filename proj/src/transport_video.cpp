#include "fso/transport_video.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace fso {

namespace {

// Skips whitespace and '#' comments in a PNM header.
std::size_t skip_space(std::span<const std::uint8_t> b, std::size_t i) {
    while (i < b.size()) {
        if (b[i] == '#') {
            while (i < b.size() && b[i] != '\n') ++i;
        } else if (std::isspace(b[i])) {
            ++i;
        } else {
            break;
        }
    }
    return i;
}

std::uint64_t read_uint(std::span<const std::uint8_t> b, std::size_t& i, const std::string& name) {
    i = skip_space(b, i);
    if (i >= b.size() || !std::isdigit(b[i])) throw VideoError(name + ": malformed PGM header");
    std::uint64_t v = 0;
    while (i < b.size() && std::isdigit(b[i])) {
        v = v * 10 + (b[i] - '0');
        if (v > 1'000'000'000) throw VideoError(name + ": PGM header value out of range");
        ++i;
    }
    return v;
}

}  // namespace

VideoFrame decode_pgm(std::span<const std::uint8_t> bytes, const std::string& name) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw VideoError(name + ": not a binary PGM (P5) file");
    std::size_t i = 2;
    const auto width = read_uint(bytes, i, name);
    const auto height = read_uint(bytes, i, name);
    const auto maxval = read_uint(bytes, i, name);
    if (width == 0 || height == 0) throw VideoError(name + ": zero image dimension");
    if (maxval != 255) throw VideoError(name + ": only maxval 255 is supported");
    if (i >= bytes.size() || !std::isspace(bytes[i])) throw VideoError(name + ": malformed PGM header");
    ++i;  // single whitespace before the raster
    const std::size_t count = width * height;
    if (bytes.size() - i < count) throw VideoError(name + ": truncated raster");

    VideoFrame f;
    f.width = static_cast<std::uint32_t>(width);
    f.height = static_cast<std::uint32_t>(height);
    f.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                    bytes.begin() + static_cast<std::ptrdiff_t>(i + count));
    return f;
}

Bytes encode_pgm(const VideoFrame& frame) {
    const std::string header =
        "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.insert(out.end(), frame.pixels.begin(), frame.pixels.end());
    return out;
}

VideoFrame read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VideoError(path.string() + ": cannot open");
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_pgm(data, path.string());
}

void write_pgm(const std::filesystem::path& path, const VideoFrame& frame) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const auto bytes = encode_pgm(frame);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw VideoError(path.string() + ": write failed");
}

std::vector<VideoFrame> load_frame_sequence(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw VideoError(dir.string() + ": not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    if (files.empty()) throw VideoError(dir.string() + ": no frames");
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

    std::vector<VideoFrame> frames;
    frames.reserve(files.size());
    for (const auto& f : files) {
        frames.push_back(read_pgm(f));
        if (frames.back().width != frames.front().width || frames.back().height != frames.front().height)
            throw VideoError(f.string() + ": dimension mismatch with " + files.front().filename().string());
    }
    return frames;
}

VideoFrame synthetic_frame(std::uint32_t width, std::uint32_t height, std::uint32_t index) {
    VideoFrame f{width, height, Bytes(std::size_t{width} * height)};
    const std::uint32_t bar = (index * 3) % width;
    for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
            std::uint32_t v = (x * 255 / std::max(width - 1, 1u) + y + index) & 0xFF;
            if (x >= bar && x < bar + width / 16 + 1) v = 255 - v;
            f.pixels[std::size_t{y} * width + x] = static_cast<std::uint8_t>(v);
        }
    }
    return f;
}

void check_payload_size(std::size_t payload_size) {
    if (payload_size < kMinPayloadSize || payload_size > kMaxPayload)
        throw std::invalid_argument("payload_size must lie in [" + std::to_string(kMinPayloadSize) +
                                    ", " + std::to_string(kMaxPayload) + "]");
}

StreamLayout::StreamLayout(std::vector<std::size_t> frame_lengths, std::size_t payload_size)
    : lengths_(std::move(frame_lengths)), payload_size_(payload_size) {
    check_payload_size(payload_size);
    offsets_.reserve(lengths_.size());
    for (auto len : lengths_) {
        offsets_.push_back(total_);
        total_ += kFramePrefixSize + len;
    }
}

std::size_t StreamLayout::packet_count() const noexcept {
    return (total_ + payload_size_ - 1) / payload_size_;
}

std::uint32_t StreamLayout::last_packet_of_frame(std::size_t k) const {
    const std::size_t end = frame_offset(k) + kFramePrefixSize + frame_length(k);
    return static_cast<std::uint32_t>((end - 1) / payload_size_);
}

Bytes frame_prefix(std::uint32_t index, std::uint32_t length) {
    return {static_cast<std::uint8_t>(index >> 24), static_cast<std::uint8_t>(index >> 16),
            static_cast<std::uint8_t>(index >> 8),  static_cast<std::uint8_t>(index),
            static_cast<std::uint8_t>(length >> 24), static_cast<std::uint8_t>(length >> 16),
            static_cast<std::uint8_t>(length >> 8), static_cast<std::uint8_t>(length)};
}

Segmenter::Segmenter(std::size_t payload_size, std::uint8_t flags)
    : payload_size_(payload_size), flags_(flags) {
    check_payload_size(payload_size);
}

void Segmenter::push_unit(std::uint32_t index, std::span<const std::uint8_t> bytes) {
    const auto prefix = frame_prefix(index, static_cast<std::uint32_t>(bytes.size()));
    pending_.insert(pending_.end(), prefix.begin(), prefix.end());
    pending_.insert(pending_.end(), bytes.begin(), bytes.end());
    std::size_t full = pending_.size() / payload_size_;
    std::size_t consumed = 0;
    for (std::size_t i = 0; i < full; ++i, consumed += payload_size_) {
        ready_.push_back({next_seq_++, flags_,
                          Bytes(pending_.begin() + static_cast<std::ptrdiff_t>(consumed),
                                pending_.begin() + static_cast<std::ptrdiff_t>(consumed + payload_size_))});
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(consumed));
}

void Segmenter::flush() {
    if (pending_.empty()) return;
    ready_.push_back({next_seq_++, flags_, std::move(pending_)});
    pending_.clear();
}

Packet Segmenter::pop_packet() {
    Packet p = std::move(ready_[ready_head_++]);
    if (ready_head_ == ready_.size()) {
        ready_.clear();
        ready_head_ = 0;
    }
    return p;
}

std::vector<Packet> segment(std::span<const VideoFrame> frames, std::size_t payload_size) {
    Segmenter seg(payload_size, frame_flags::kRawFrames);
    std::vector<Packet> out;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        seg.push_unit(static_cast<std::uint32_t>(k), frames[k].pixels);
        while (seg.has_packet()) out.push_back(seg.pop_packet());
    }
    seg.flush();
    while (seg.has_packet()) out.push_back(seg.pop_packet());
    return out;
}

std::vector<Packet> segment(std::span<const std::uint8_t> opaque, std::size_t payload_size) {
    Segmenter seg(payload_size, 0);
    seg.push_unit(0, opaque);
    seg.flush();
    std::vector<Packet> out;
    while (seg.has_packet()) out.push_back(seg.pop_packet());
    return out;
}

Reassembler::Reassembler(StreamLayout layout)
    : layout_(std::move(layout)), stream_(layout_.stream_length(), 0),
      present_(layout_.stream_length(), 0) {}

void Reassembler::mark(std::uint32_t seq, std::optional<std::span<const std::uint8_t>> payload) {
    const std::size_t begin = std::size_t{seq} * layout_.payload_size();
    const std::size_t end = std::min(begin + layout_.payload_size(), layout_.stream_length());
    if (begin >= end) return;  // beyond the stream
    if (payload && payload->size() == end - begin) {
        std::copy(payload->begin(), payload->end(), stream_.begin() + static_cast<std::ptrdiff_t>(begin));
        std::fill(present_.begin() + static_cast<std::ptrdiff_t>(begin),
                  present_.begin() + static_cast<std::ptrdiff_t>(end), 1);
        ++packets_ok_;
    } else {
        ++packets_lost_;
    }
}

std::vector<Reassembler::Completed> Reassembler::accept(
    std::uint32_t seq, std::optional<std::span<const std::uint8_t>> payload) {
    if (seq < next_seq_ || seq >= layout_.packet_count()) return {};
    for (; next_seq_ < seq; ++next_seq_) mark(next_seq_, std::nullopt);
    mark(seq, payload);
    next_seq_ = seq + 1;
    return finalize_through(static_cast<std::int64_t>(seq));
}

std::vector<Reassembler::Completed> Reassembler::finish() {
    const auto total = static_cast<std::uint32_t>(layout_.packet_count());
    for (; next_seq_ < total; ++next_seq_) mark(next_seq_, std::nullopt);
    return finalize_through(static_cast<std::int64_t>(total) - 1);
}

std::vector<Reassembler::Completed> Reassembler::finalize_through(std::int64_t last_seq_accounted) {
    std::vector<Completed> done;
    while (next_frame_ < layout_.frame_count() &&
           static_cast<std::int64_t>(layout_.last_packet_of_frame(next_frame_)) <= last_seq_accounted) {
        const std::size_t k = next_frame_++;
        const std::size_t begin = layout_.frame_offset(k) + kFramePrefixSize;
        const std::size_t len = layout_.frame_length(k);
        Completed c{k, Bytes(stream_.begin() + static_cast<std::ptrdiff_t>(begin),
                             stream_.begin() + static_cast<std::ptrdiff_t>(begin + len)),
                    false};
        for (std::size_t i = 0; i < len; ++i) {
            if (present_[begin + i]) continue;
            c.concealed = true;
            c.bytes[i] = (have_good_ && i < last_good_.size()) ? last_good_[i] : kConcealFill;
        }
        if (!c.concealed) {
            last_good_ = c.bytes;
            have_good_ = true;
        }
        done.push_back(std::move(c));
    }
    return done;
}

ReassemblyResult reassemble(const StreamLayout& layout, std::span<const ReceivedPacket> packets) {
    Reassembler rx(layout);
    ReassemblyResult result;
    result.frames.resize(layout.frame_count());
    auto take = [&](std::vector<Reassembler::Completed> done) {
        for (auto& c : done) {
            (c.concealed ? result.metrics.frames_concealed : result.metrics.frames_delivered) += 1;
            result.frames[c.index] = std::move(c.bytes);
        }
    };
    for (const auto& p : packets) {
        if (p.payload)
            take(rx.accept(p.seq, std::span<const std::uint8_t>(*p.payload)));
        else
            take(rx.accept(p.seq, std::nullopt));
    }
    take(rx.finish());
    result.metrics.packets_sent = layout.packet_count();
    result.metrics.packets_lost = rx.packets_lost();
    return result;
}

double mean_squared_error(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> received) {
    if (reference.size() != received.size()) throw VideoError("psnr: dimension mismatch");
    if (reference.empty()) return 0.0;
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const int d = int{reference[i]} - int{received[i]};
        sum += static_cast<std::uint64_t>(d * d);
    }
    return static_cast<double>(sum) / static_cast<double>(reference.size());
}

double psnr_from_mse(double mse) {
    if (mse == 0.0) return kLosslessPsnr;
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr(const VideoFrame& reference, const VideoFrame& received) {
    if (reference.width != received.width || reference.height != received.height)
        throw VideoError("psnr: dimension mismatch");
    return psnr_from_mse(mean_squared_error(reference.pixels, received.pixels));
}

}  // namespace fso
