#include <zlib.h>

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

#include "doctest.h"
#include "fso/fec_framing.hpp"
#include "fso/rng.hpp"

using namespace fso;

namespace {

Bits nibble(unsigned v) { return {Bits::value_type(v >> 3 & 1), Bits::value_type(v >> 2 & 1), Bits::value_type(v >> 1 & 1), Bits::value_type(v & 1)}; }

Bits random_bits(RngStream& rng, std::size_t n) {
    Bits b(n);
    for (auto& x : b) x = rng.uniform() < 0.5 ? 0 : 1;
    return b;
}

Bytes random_bytes(RngStream& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.uniform() * 256.0);
    return b;
}

std::uint32_t zlib_crc(std::span<const std::uint8_t> b) {
    return static_cast<std::uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

Bytes read_fixture(const std::string& name) {
    std::ifstream in(std::filesystem::path(FSO_FIXTURES) / "frames" / name, std::ios::binary);
    REQUIRE(in);
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("fec_encode") {
    CHECK(fec_encode(Hamming74{}, nibble(0b0000)) == Bits{0, 0, 0, 0, 0, 0, 0});
    CHECK(fec_encode(Hamming74{}, nibble(0b1011)) == Bits{1, 0, 1, 1, 0, 1, 0});
    CHECK(fec_encode(Repetition{3}, Bits{1, 0}) == Bits{1, 1, 1, 0, 0, 0});
    CHECK(fec_encode(NoFec{}, Bits{1, 0, 1}) == Bits{1, 0, 1});
    CHECK_THROWS_AS(fec_encode(Hamming74{}, Bits{1, 0, 1}), FecLengthError);
    CHECK_THROWS(fec_encode(Repetition{2}, Bits{1}));
    CHECK_THROWS(fec_encode(Repetition{1}, Bits{1}));
}

TEST_CASE("Hamming(7,4) codebook") {
    // Hand XOR reference, independent of the encoder's loop.
    for (unsigned v = 0; v < 16; ++v) {
        const Bits d = nibble(v);
        const Bits expected{d[0], d[1], d[2], d[3], Bits::value_type(d[0] ^ d[1] ^ d[3]),
                            Bits::value_type(d[0] ^ d[2] ^ d[3]), Bits::value_type(d[1] ^ d[2] ^ d[3])};
        CHECK(fec_encode(Hamming74{}, d) == expected);
    }

    SUBCASE("minimum distance 3") {
        int min_distance = 7;
        for (unsigned a = 0; a < 16; ++a) {
            for (unsigned b = a + 1; b < 16; ++b) {
                const auto ca = fec_encode(Hamming74{}, nibble(a));
                const auto cb = fec_encode(Hamming74{}, nibble(b));
                int dist = 0;
                for (int i = 0; i < 7; ++i) dist += ca[i] != cb[i];
                min_distance = std::min(min_distance, dist);
            }
        }
        CHECK(min_distance == 3);
    }

    SUBCASE("every single-bit error is corrected (112 cases)") {
        int cases = 0;
        for (unsigned v = 0; v < 16; ++v) {
            const auto cw = fec_encode(Hamming74{}, nibble(v));
            for (int flip = 0; flip < 7; ++flip) {
                auto bad = cw;
                bad[flip] ^= 1;
                const auto r = fec_decode(Hamming74{}, bad);
                CHECK(r.bits == nibble(v));
                CHECK(r.corrected_count == 1);
                ++cases;
            }
        }
        CHECK(cases == 112);
    }
}

TEST_CASE("fec_decode") {
    const auto r = fec_decode(Repetition{3}, Bits{1, 0, 1});
    CHECK(r.bits == Bits{1});
    CHECK(r.corrected_count == 1);
    CHECK(fec_decode(Repetition{5}, Bits{0, 0, 1, 1, 0}).bits == Bits{0});
    CHECK_THROWS_AS(fec_decode(Hamming74{}, Bits(8, 0)), FecLengthError);
    CHECK_THROWS_AS(fec_decode(Repetition{3}, Bits(4, 0)), FecLengthError);

    SUBCASE("clean round trip and rate accounting") {
        RngStream rng(4);
        const std::vector<FecScheme> schemes{NoFec{}, Repetition{3}, Repetition{7}, Hamming74{}};
        for (const auto& scheme : schemes) {
            for (std::size_t n : {0, 4, 8, 100, 4096}) {
                const Bits data = random_bits(rng, n);
                const Bits coded = fec_encode(scheme, data);
                const auto shape = code_shape(scheme);
                CHECK(coded.size() * shape.data_bits == n * shape.coded_bits);
                const auto back = fec_decode(scheme, coded);
                CHECK(back.bits == data);
                CHECK(back.corrected_count == 0);
            }
        }
    }
}

TEST_CASE("interleaver") {
    const Bits x{1, 0, 0, 1, 1, 1, 0, 0};
    CHECK(interleave({1, 8}, x) == x);
    // rows=2, cols=2: [a b; c d] read by column -> a c b d
    CHECK(interleave({2, 2}, Bits{1, 0, 0, 1}) == Bits{1, 0, 0, 1});
    CHECK(interleave({2, 2}, Bits{1, 1, 0, 0}) == Bits{1, 0, 1, 0});
    CHECK_THROWS_AS(interleave({2, 3}, x), FecLengthError);
    CHECK_THROWS(interleave({0, 3}, x));

    SUBCASE("index permutation is a bijection and inverts exactly") {
        // Interleave position labels to see the permutation itself.
        const Interleaver il{5, 7};
        std::vector<int> seen(il.block_size(), 0);
        for (std::size_t pos = 0; pos < il.block_size(); ++pos) {
            Bits one(il.block_size(), 0);
            one[pos] = 1;
            const auto out = interleave(il, one);
            const auto where = std::find(out.begin(), out.end(), 1) - out.begin();
            ++seen[static_cast<std::size_t>(where)];
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

        RngStream rng(8);
        for (int i = 0; i < 1000; ++i) {
            const Bits block = random_bits(rng, il.block_size() * 2);
            REQUIRE(deinterleave(il, interleave(il, block)) == block);
        }
    }

    SUBCASE("a burst of <= rows errors hits each codeword at most once") {
        const Interleaver il{64, 7};
        RngStream rng(15);
        const Bits data = random_bits(rng, 256);
        const auto coded = interleave(il, fec_encode(Hamming74{}, data));
        for (std::size_t start = 0; start + il.rows <= coded.size(); start += 37) {
            auto hit = coded;
            for (std::size_t i = start; i < start + il.rows; ++i) hit[i] ^= 1;
            const auto back = fec_decode(Hamming74{}, deinterleave(il, hit));
            REQUIRE(back.bits == data);
        }
    }
}

TEST_CASE("crc32") {
    CHECK(crc32(std::string_view("")) == 0x00000000u);
    CHECK(crc32(std::string_view("123456789")) == 0xCBF43926u);

    RngStream rng(2718);
    SUBCASE("agrees with zlib") {
        for (int i = 0; i < 200; ++i) {
            const auto b = random_bytes(rng, static_cast<std::size_t>(rng.uniform() * 3000));
            REQUIRE(crc32(b) == zlib_crc(b));
        }
    }
    SUBCASE("single-bit flips always change the value") {
        for (int i = 0; i < 10000; ++i) {
            const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 8192);
            auto b = random_bytes(rng, n);
            const auto before = crc32(b);
            const auto bit = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n * 8));
            b[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
            REQUIRE(crc32(b) != before);
        }
    }
}

TEST_CASE("frame_pack golden vectors") {
    Bytes ramp(300);
    std::iota(ramp.begin(), ramp.end(), std::uint8_t{0});
    const std::string hello = "hello, free-space optics";
    CHECK(frame_pack(0, 0, Bytes{}) == read_fixture("seq0_opaque_empty.bin"));
    CHECK(frame_pack(1, 1, Bytes(hello.begin(), hello.end())) == read_fixture("seq1_raw_hello.bin"));
    CHECK(frame_pack(0xDEADBEEF, 1, ramp) == read_fixture("seq_deadbeef_raw_ramp.bin"));
}

TEST_CASE("frame_unpack") {
    RngStream rng(99);
    SUBCASE("round trip") {
        for (int i = 0; i < 200; ++i) {
            const auto seq = static_cast<std::uint32_t>(rng.uniform() * 4294967296.0);
            const auto flags = static_cast<std::uint8_t>(rng.uniform() * 256.0);
            const auto payload = random_bytes(rng, static_cast<std::size_t>(rng.uniform() * (kMaxPayload + 1)));
            const auto parsed = frame_unpack(frame_pack(seq, flags, payload));
            REQUIRE(std::holds_alternative<Frame>(parsed));
            CHECK(std::get<Frame>(parsed) == Frame{seq, flags, payload});
        }
    }
    const auto good = frame_pack(7, 1, random_bytes(rng, 100));
    SUBCASE("bad crc") {
        auto b = good;
        b.back() ^= 0xFF;
        CHECK(std::get<IntegrityError>(frame_unpack(b)) == IntegrityError::BadCrc);
        b = good;
        b[20] ^= 0x01;
        CHECK(std::get<IntegrityError>(frame_unpack(b)) == IntegrityError::BadCrc);
    }
    SUBCASE("truncated buffer") {
        const auto cut = std::span(good).first(60);
        CHECK(std::get<IntegrityError>(frame_unpack(cut)) == IntegrityError::BadLength);
        CHECK(std::get<IntegrityError>(frame_unpack(std::span(good).first(8))) == IntegrityError::BadLength);
    }
    SUBCASE("bad magic and version are reported first") {
        auto b = good;
        b[0] = 'X';
        b.back() ^= 0xFF;
        CHECK(std::get<IntegrityError>(frame_unpack(b)) == IntegrityError::BadMagic);
        b = good;
        b[4] = 0x02;
        CHECK(std::get<IntegrityError>(frame_unpack(b)) == IntegrityError::BadVersion);
        CHECK(std::get<IntegrityError>(frame_unpack(Bytes{})) == IntegrityError::BadMagic);
    }
    SUBCASE("oversized payload is refused at pack time") {
        CHECK_THROWS(frame_pack(0, 0, Bytes(kMaxPayload + 1)));
        CHECK_NOTHROW(frame_pack(0, 0, Bytes(kMaxPayload)));
    }
    CHECK(to_string(IntegrityError::BadCrc) == "BadCrc");
}

TEST_CASE("bit/byte packing is MSB first") {
    CHECK(bytes_to_bits(Bytes{0x80, 0x01}) == Bits{1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1});
    RngStream rng(3);
    const auto b = random_bytes(rng, 513);
    CHECK(bits_to_bytes(bytes_to_bits(b)) == b);
    CHECK_THROWS(bits_to_bytes(Bits(7, 0)));
}

TEST_CASE("UnitCodec") {
    const UnitCodec codec(Hamming74{}, {64, 7}, 1024);
    CHECK(codec.coded_bits() % 448 == 0);
    CHECK(codec.unit_bytes() >= UnitCodec::kUnitPrefix + kFrameOverhead + 1024);
    CHECK(codec.coded_bits() == codec.unit_bytes() * 8 / 4 * 7);

    RngStream rng(12);
    SUBCASE("full and short frames round trip") {
        for (std::size_t len : {std::size_t{1024}, std::size_t{264}, std::size_t{0}}) {
            const auto frame = frame_pack(5, 1, random_bytes(rng, len));
            const auto coded = codec.encode(frame);
            REQUIRE(coded.size() == codec.coded_bits());
            const auto d = codec.decode(coded);
            REQUIRE(std::holds_alternative<Frame>(d.frame));
            CHECK(std::get<Frame>(d.frame).payload.size() == len);
            CHECK(d.unit == codec.wrap(frame));
        }
    }
    SUBCASE("one error per codeword is repaired") {
        const auto frame = frame_pack(9, 1, random_bytes(rng, 1024));
        auto coded = codec.encode(frame);
        // consecutive channel bits land in distinct codewords
        for (std::size_t i = 0; i < 64; ++i) coded[1000 + i] ^= 1;
        const auto d = codec.decode(coded);
        CHECK(std::holds_alternative<Frame>(d.frame));
        CHECK(d.corrected == 64);
    }
    SUBCASE("corrupted pad length is caught") {
        auto plain = codec.wrap(frame_pack(1, 1, random_bytes(rng, 100)));
        plain[1] ^= 0x04;
        const auto coded = interleave(codec.interleaver(), fec_encode(codec.scheme(), bytes_to_bits(plain)));
        const auto d = codec.decode(coded);
        REQUIRE(std::holds_alternative<IntegrityError>(d.frame));
        CHECK(std::get<IntegrityError>(d.frame) == IntegrityError::BadLength);
    }
    SUBCASE("idle units decode to a rejected frame") {
        const auto d = codec.decode(Bits(codec.coded_bits(), 0));
        CHECK(std::holds_alternative<IntegrityError>(d.frame));
    }
    SUBCASE("other schemes align too") {
        for (const FecScheme& s : {FecScheme{NoFec{}}, FecScheme{Repetition{3}}, FecScheme{Repetition{5}}}) {
            const UnitCodec c(s, {16, 7}, 500);
            CHECK(c.coded_bits() % (16 * 7) == 0);
            const auto frame = frame_pack(2, 0, random_bytes(rng, 321));
            CHECK(std::holds_alternative<Frame>(c.decode(c.encode(frame)).frame));
        }
    }
}
