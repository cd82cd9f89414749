#include "fso/fec_framing.hpp"

#include <algorithm>
#include <numeric>

namespace fso {

void validate(const FecScheme& scheme) {
    if (const auto* rep = std::get_if<Repetition>(&scheme)) {
        if (rep->r < 3 || rep->r % 2 == 0)
            throw std::invalid_argument("repetition factor must be odd and >= 3");
    }
}

std::string to_string(const FecScheme& scheme) {
    if (std::holds_alternative<NoFec>(scheme)) return "none";
    if (std::holds_alternative<Hamming74>(scheme)) return "hamming74";
    return "repetition";
}

CodeShape code_shape(const FecScheme& scheme) {
    if (std::holds_alternative<Hamming74>(scheme)) return {4, 7};
    if (const auto* rep = std::get_if<Repetition>(&scheme)) return {1, rep->r};
    return {1, 1};
}

Bits fec_encode(const FecScheme& scheme, std::span<const std::uint8_t> bits) {
    validate(scheme);
    if (std::holds_alternative<NoFec>(scheme)) return Bits(bits.begin(), bits.end());

    if (const auto* rep = std::get_if<Repetition>(&scheme)) {
        Bits out;
        out.reserve(bits.size() * rep->r);
        for (auto b : bits) out.insert(out.end(), rep->r, b);
        return out;
    }

    if (bits.size() % 4 != 0)
        throw FecLengthError("hamming74 input length " + std::to_string(bits.size()) +
                             " is not a multiple of 4");
    Bits out;
    out.reserve(bits.size() / 4 * 7);
    for (std::size_t i = 0; i < bits.size(); i += 4) {
        const std::uint8_t d1 = bits[i], d2 = bits[i + 1], d3 = bits[i + 2], d4 = bits[i + 3];
        out.insert(out.end(), {d1, d2, d3, d4, static_cast<std::uint8_t>(d1 ^ d2 ^ d4),
                               static_cast<std::uint8_t>(d1 ^ d3 ^ d4),
                               static_cast<std::uint8_t>(d2 ^ d3 ^ d4)});
    }
    return out;
}

namespace {

// Syndrome (s1 s2 s3) -> position of the single flipped bit in
// [d1 d2 d3 d4 p1 p2 p3], from the parity-check columns of each position.
constexpr std::array<int, 8> kSyndromePosition = [] {
    std::array<int, 8> pos{};
    pos.fill(-1);
    // column of H for each codeword position, bits (s1 s2 s3) packed as s1<<2|s2<<1|s3
    constexpr std::array<int, 7> columns{0b110, 0b101, 0b011, 0b111, 0b100, 0b010, 0b001};
    for (int i = 0; i < 7; ++i) pos[columns[i]] = i;
    return pos;
}();

}  // namespace

DecodeResult fec_decode(const FecScheme& scheme, std::span<const std::uint8_t> coded) {
    validate(scheme);
    DecodeResult result;
    if (std::holds_alternative<NoFec>(scheme)) {
        result.bits.assign(coded.begin(), coded.end());
        return result;
    }

    if (const auto* rep = std::get_if<Repetition>(&scheme)) {
        const std::size_t r = rep->r;
        if (coded.size() % r != 0)
            throw FecLengthError("repetition input length " + std::to_string(coded.size()) +
                                 " is not a multiple of " + std::to_string(r));
        result.bits.reserve(coded.size() / r);
        for (std::size_t i = 0; i < coded.size(); i += r) {
            std::size_t ones = 0;
            for (std::size_t j = 0; j < r; ++j) ones += coded[i + j] ? 1 : 0;
            const bool one = ones * 2 > r;
            result.bits.push_back(one ? 1 : 0);
            if (ones != 0 && ones != r) ++result.corrected_count;
        }
        return result;
    }

    if (coded.size() % 7 != 0)
        throw FecLengthError("hamming74 input length " + std::to_string(coded.size()) +
                             " is not a multiple of 7");
    result.bits.reserve(coded.size() / 7 * 4);
    for (std::size_t i = 0; i < coded.size(); i += 7) {
        std::array<std::uint8_t, 7> cw;
        std::copy_n(coded.begin() + static_cast<std::ptrdiff_t>(i), 7, cw.begin());
        const int s1 = cw[0] ^ cw[1] ^ cw[3] ^ cw[4];
        const int s2 = cw[0] ^ cw[2] ^ cw[3] ^ cw[5];
        const int s3 = cw[1] ^ cw[2] ^ cw[3] ^ cw[6];
        const int syndrome = s1 << 2 | s2 << 1 | s3;
        if (syndrome != 0) {
            cw[kSyndromePosition[syndrome]] ^= 1;
            ++result.corrected_count;
        }
        result.bits.insert(result.bits.end(), cw.begin(), cw.begin() + 4);
    }
    return result;
}

void Interleaver::validate() const {
    if (rows == 0 || cols == 0) throw std::invalid_argument("interleaver dimensions must be positive");
}

namespace {

template <bool Forward>
Bits permute_blocks(const Interleaver& il, std::span<const std::uint8_t> bits) {
    il.validate();
    const std::size_t block = il.block_size();
    if (bits.size() % block != 0)
        throw FecLengthError("interleaver input length " + std::to_string(bits.size()) +
                             " is not a multiple of " + std::to_string(block));
    Bits out(bits.size());
    for (std::size_t base = 0; base < bits.size(); base += block) {
        std::size_t k = 0;
        for (std::size_t c = 0; c < il.cols; ++c) {
            for (std::size_t r = 0; r < il.rows; ++r, ++k) {
                const std::size_t rowmajor = r * il.cols + c;
                if constexpr (Forward)
                    out[base + k] = bits[base + rowmajor];
                else
                    out[base + rowmajor] = bits[base + k];
            }
        }
    }
    return out;
}

}  // namespace

Bits interleave(const Interleaver& il, std::span<const std::uint8_t> bits) {
    return permute_blocks<true>(il, bits);
}

Bits deinterleave(const Interleaver& il, std::span<const std::uint8_t> bits) {
    return permute_blocks<false>(il, bits);
}

namespace {

constexpr std::array<std::uint32_t, 256> kCrcTable = [] {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}();

void put_be32(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(std::span<const std::uint8_t> b) {
    return std::uint32_t{b[0]} << 24 | std::uint32_t{b[1]} << 16 | std::uint32_t{b[2]} << 8 | b[3];
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    std::uint32_t c = 0xFFFFFFFFu;
    for (auto b : bytes) c = kCrcTable[(c ^ b) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::uint32_t crc32(std::string_view text) {
    return crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string_view to_string(IntegrityError e) {
    switch (e) {
        case IntegrityError::BadMagic: return "BadMagic";
        case IntegrityError::BadVersion: return "BadVersion";
        case IntegrityError::BadLength: return "BadLength";
        case IntegrityError::BadCrc: return "BadCrc";
    }
    return "Unknown";
}

Bytes frame_pack(std::uint32_t seq, std::uint8_t flags, std::span<const std::uint8_t> payload) {
    if (payload.size() > kMaxPayload)
        throw std::invalid_argument("frame payload of " + std::to_string(payload.size()) +
                                    " bytes exceeds " + std::to_string(kMaxPayload));
    Bytes out(kFrameMagic.begin(), kFrameMagic.end());
    out.reserve(kFrameOverhead + payload.size());
    out.push_back(kFrameVersion);
    out.push_back(flags);
    put_be32(out, seq);
    out.push_back(static_cast<std::uint8_t>(payload.size() >> 8));
    out.push_back(static_cast<std::uint8_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    put_be32(out, crc32(out));
    return out;
}

std::variant<Frame, IntegrityError> frame_unpack(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kFrameMagic.size() ||
        !std::equal(kFrameMagic.begin(), kFrameMagic.end(), bytes.begin()))
        return IntegrityError::BadMagic;
    if (bytes.size() < 5 || bytes[4] != kFrameVersion) return IntegrityError::BadVersion;
    if (bytes.size() < kFrameHeaderSize) return IntegrityError::BadLength;
    const std::size_t len = std::size_t{bytes[10]} << 8 | bytes[11];
    if (len > kMaxPayload || bytes.size() != kFrameOverhead + len) return IntegrityError::BadLength;
    const auto body = bytes.first(kFrameHeaderSize + len);
    if (crc32(body) != get_be32(bytes.subspan(kFrameHeaderSize + len, 4)))
        return IntegrityError::BadCrc;

    Frame f;
    f.flags = bytes[5];
    f.seq = get_be32(bytes.subspan(6, 4));
    f.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.begin() + kFrameHeaderSize + len);
    return f;
}

Bits bytes_to_bits(std::span<const std::uint8_t> bytes) {
    Bits out(bytes.size() * 8);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        for (int k = 0; k < 8; ++k) out[i * 8 + k] = (bytes[i] >> (7 - k)) & 1;
    return out;
}

Bytes bits_to_bytes(std::span<const std::uint8_t> bits) {
    if (bits.size() % 8 != 0) throw std::invalid_argument("bit count is not a multiple of 8");
    Bytes out(bits.size() / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        out[i / 8] |= static_cast<std::uint8_t>((bits[i] & 1) << (7 - i % 8));
    return out;
}

UnitCodec::UnitCodec(FecScheme scheme, Interleaver il, std::size_t max_payload)
    : scheme_(scheme), il_(il) {
    fso::validate(scheme_);
    il_.validate();
    if (max_payload > kMaxPayload) throw std::invalid_argument("max_payload exceeds frame limit");

    // Smallest byte count holding the largest frame whose coded length fills
    // whole interleaver blocks.
    const auto shape = code_shape(scheme_);
    const std::size_t minimum = kUnitPrefix + kFrameOverhead + max_payload;
    const std::size_t block = il_.block_size();
    std::size_t bytes = minimum;
    for (;; ++bytes) {
        const std::size_t bits = bytes * 8;
        if (bits % shape.data_bits == 0 && (bits / shape.data_bits * shape.coded_bits) % block == 0)
            break;
        if (bytes > minimum + 8 * block)
            throw std::invalid_argument("interleaver block cannot be aligned with the code");
    }
    unit_bytes_ = bytes;
    coded_bits_ = bytes * 8 / shape.data_bits * shape.coded_bits;
}

Bytes UnitCodec::wrap(std::span<const std::uint8_t> frame_bytes) const {
    if (frame_bytes.size() + kUnitPrefix > unit_bytes_)
        throw std::invalid_argument("frame too large for unit");
    const std::size_t pad = unit_bytes_ - kUnitPrefix - frame_bytes.size();
    Bytes unit;
    unit.reserve(unit_bytes_);
    unit.push_back(static_cast<std::uint8_t>(pad >> 8));
    unit.push_back(static_cast<std::uint8_t>(pad));
    unit.insert(unit.end(), frame_bytes.begin(), frame_bytes.end());
    unit.resize(unit_bytes_, 0);
    return unit;
}

Bits UnitCodec::encode(std::span<const std::uint8_t> frame_bytes) const {
    const Bytes unit = wrap(frame_bytes);
    return interleave(il_, fec_encode(scheme_, bytes_to_bits(unit)));
}

UnitCodec::Decoded UnitCodec::decode(std::span<const std::uint8_t> coded) const {
    if (coded.size() != coded_bits_)
        throw FecLengthError("unit of " + std::to_string(coded.size()) + " bits, expected " +
                             std::to_string(coded_bits_));
    auto fec = fec_decode(scheme_, deinterleave(il_, coded));
    Decoded out{bits_to_bytes(fec.bits), fec.corrected_count, IntegrityError::BadLength};
    const std::size_t pad = std::size_t{out.unit[0]} << 8 | out.unit[1];
    if (pad + kUnitPrefix > unit_bytes_) return out;
    const std::size_t frame_len = unit_bytes_ - kUnitPrefix - pad;
    out.frame = frame_unpack(std::span(out.unit).subspan(kUnitPrefix, frame_len));
    return out;
}

}  // namespace fso
