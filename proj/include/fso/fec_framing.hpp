#pragma once

// Forward error correction, block interleaving and the CRC-protected
// transport frame.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fso/phy.hpp"

namespace fso {

using Bytes = std::vector<std::uint8_t>;

class FecLengthError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct NoFec {};
struct Repetition {
    unsigned r = 3;  // odd, >= 3
};
struct Hamming74 {};

using FecScheme = std::variant<NoFec, Repetition, Hamming74>;

void validate(const FecScheme& scheme);
std::string to_string(const FecScheme& scheme);

/// Data bits consumed per codeword and coded bits emitted per codeword.
struct CodeShape {
    std::size_t data_bits;
    std::size_t coded_bits;
};
CodeShape code_shape(const FecScheme& scheme);

Bits fec_encode(const FecScheme& scheme, std::span<const std::uint8_t> bits);

struct DecodeResult {
    Bits bits;
    std::size_t corrected_count = 0;
};

DecodeResult fec_decode(const FecScheme& scheme, std::span<const std::uint8_t> coded);

/// Row-major write, column-major read over rows x cols blocks.
struct Interleaver {
    std::size_t rows = 64;
    std::size_t cols = 7;

    std::size_t block_size() const noexcept { return rows * cols; }
    void validate() const;
};

Bits interleave(const Interleaver& il, std::span<const std::uint8_t> bits);
Bits deinterleave(const Interleaver& il, std::span<const std::uint8_t> bits);

/// IEEE CRC-32 (reflected 0xEDB88320, init and final xor 0xFFFFFFFF).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::uint32_t crc32(std::string_view text);

inline constexpr std::array<std::uint8_t, 4> kFrameMagic{'F', 'S', 'O', '1'};
inline constexpr std::uint8_t kFrameVersion = 0x01;
inline constexpr std::size_t kMaxPayload = 8192;
inline constexpr std::size_t kFrameHeaderSize = 12;  // magic, version, flags, seq, len
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;

namespace frame_flags {
inline constexpr std::uint8_t kRawFrames = 0x01;  // bit0: 0 opaque, 1 raw-frame stream
}

struct Frame {
    std::uint32_t seq = 0;
    std::uint8_t flags = 0;
    Bytes payload;

    bool operator==(const Frame&) const = default;
};

enum class IntegrityError { BadMagic, BadVersion, BadLength, BadCrc };

std::string_view to_string(IntegrityError e);

Bytes frame_pack(std::uint32_t seq, std::uint8_t flags, std::span<const std::uint8_t> payload);

/// Validates magic, version, length and CRC in that order. The buffer must
/// hold exactly one frame.
std::variant<Frame, IntegrityError> frame_unpack(std::span<const std::uint8_t> bytes);

Bits bytes_to_bits(std::span<const std::uint8_t> bytes);  // MSB first
Bytes bits_to_bytes(std::span<const std::uint8_t> bits);   // length must be a multiple of 8

/// Fixed-length channel unit carrying one frame:
///   [pad_len u16 BE][frame bytes][pad_len zero bytes]
/// The byte count is chosen so the coded length fills whole interleaver
/// blocks. `unit_bytes` is the same for every unit of a session.
class UnitCodec {
public:
    static constexpr std::size_t kUnitPrefix = 2;

    UnitCodec(FecScheme scheme, Interleaver il, std::size_t max_payload);

    std::size_t unit_bytes() const noexcept { return unit_bytes_; }
    std::size_t coded_bits() const noexcept { return coded_bits_; }
    const FecScheme& scheme() const noexcept { return scheme_; }
    const Interleaver& interleaver() const noexcept { return il_; }

    /// Frame bytes -> plain unit bytes.
    Bytes wrap(std::span<const std::uint8_t> frame_bytes) const;
    Bits encode(std::span<const std::uint8_t> frame_bytes) const;

    struct Decoded {
        Bytes unit;                   // plain unit bytes after FEC
        std::size_t corrected = 0;
        std::variant<Frame, IntegrityError> frame;
    };
    /// Coded bits of one unit -> frame or integrity failure.
    Decoded decode(std::span<const std::uint8_t> coded) const;

private:
    FecScheme scheme_;
    Interleaver il_;
    std::size_t unit_bytes_;
    std::size_t coded_bits_;
};

}  // namespace fso
