#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "splitquant/bytes.hpp"
#include "splitquant/tensor.hpp"

namespace splitquant {

/// Errors raised while encoding/decoding wire data. Decoding arbitrary bytes
/// must only ever produce this, never a crash.
class CodecError : public std::runtime_error {
public:
    explicit CodecError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Fixed-width bit packing
// ---------------------------------------------------------------------------

/// Index sequence packed at a fixed bit width, LSB-first within each byte.
/// Unused trailing bits of the final byte are zero.
struct PackedIndices {
    int bit_width = 0;      // 1..8
    std::size_t count = 0;  // number of packed values
    std::vector<std::uint8_t> bytes;

    static std::size_t byte_length(std::size_t count, int bit_width) {
        return (count * static_cast<std::size_t>(bit_width) + 7) / 8;
    }
};

/// Canonical packing width for a K-level code: max(1, ceil(log2 K)).
inline int bits_for_levels(std::uint32_t levels) {
    if (levels < 2) throw CodecError("level count must be >= 2");
    if (levels > 256) throw CodecError("level count exceeds 8-bit packing");
    return std::max(1, static_cast<int>(std::bit_width(levels - 1)));
}

inline PackedIndices pack(std::span<const std::uint32_t> indices, int bit_width) {
    if (bit_width < 1 || bit_width > 8) throw CodecError("bit width must be in [1, 8]");
    const std::uint32_t limit = 1u << bit_width;
    PackedIndices p;
    p.bit_width = bit_width;
    p.count = indices.size();
    p.bytes.assign(PackedIndices::byte_length(p.count, bit_width), 0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::uint32_t v = indices[i];
        if (v >= limit)
            throw CodecError("index out of range for bit width at position " + std::to_string(i));
        const std::size_t bit = i * static_cast<std::size_t>(bit_width);
        const std::size_t byte = bit >> 3;
        const unsigned shift = static_cast<unsigned>(bit & 7);
        p.bytes[byte] |= static_cast<std::uint8_t>((v << shift) & 0xFF);
        if (shift + static_cast<unsigned>(bit_width) > 8)
            p.bytes[byte + 1] |= static_cast<std::uint8_t>(v >> (8 - shift));
    }
    return p;
}

inline std::vector<std::uint32_t> unpack(const PackedIndices& p) {
    if (p.bit_width < 1 || p.bit_width > 8) throw CodecError("bit width must be in [1, 8]");
    if (p.bytes.size() != PackedIndices::byte_length(p.count, p.bit_width))
        throw CodecError("truncated payload");
    const std::uint32_t mask = (1u << p.bit_width) - 1;
    std::vector<std::uint32_t> out(p.count);
    for (std::size_t i = 0; i < p.count; ++i) {
        const std::size_t bit = i * static_cast<std::size_t>(p.bit_width);
        const std::size_t byte = bit >> 3;
        const unsigned shift = static_cast<unsigned>(bit & 7);
        std::uint32_t v = static_cast<std::uint32_t>(p.bytes[byte]) >> shift;
        if (shift + static_cast<unsigned>(p.bit_width) > 8 && byte + 1 < p.bytes.size())
            v |= static_cast<std::uint32_t>(p.bytes[byte + 1]) << (8 - shift);
        out[i] = v & mask;
    }
    return out;
}

// ---------------------------------------------------------------------------
// IEEE 754 binary16 conversion (used by the top-k wire payload)
// ---------------------------------------------------------------------------

inline std::uint16_t float_to_half(float f) {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t sign = (x >> 16) & 0x8000;
    const std::int32_t exp = static_cast<std::int32_t>((x >> 23) & 0xFF) - 127 + 15;
    std::uint32_t mant = x & 0x7FFFFF;
    if (exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00);  // overflow -> inf
    if (exp <= 0) {
        if (exp < -10) return static_cast<std::uint16_t>(sign);  // underflow -> signed zero
        mant |= 0x800000;
        const unsigned shift = static_cast<unsigned>(14 - exp);
        std::uint32_t half_mant = mant >> shift;
        // round to nearest even
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1))) ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint32_t half = sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1FFF;
    if (rem > 0x1000 || (rem == 0x1000 && (half & 1))) ++half;  // may carry into exponent
    return static_cast<std::uint16_t>(half);
}

inline float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1F;
    std::uint32_t mant = h & 0x3FF;
    std::uint32_t out;
    if (exp == 0) {
        if (mant == 0) {
            out = sign;
        } else {  // subnormal half -> normal float
            std::int32_t e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400) == 0);
            out = sign | static_cast<std::uint32_t>(127 - 15 - e) << 23 | ((mant & 0x3FF) << 13);
        }
    } else if (exp == 0x1F) {
        out = sign | 0x7F800000 | (mant << 13);
    } else {
        out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(out);
}

// ---------------------------------------------------------------------------
// Wire frames
//
// Layout: magic 0x53 0x51 ("SQ"), u8 version, u8 frame type, u32le body
// length, body. All integers little-endian.
//
// Bodies:
//   Hello:    u8 protocol_version, u32 K, u8 rank, u32 dims[rank]
//   Features: u32 request_id, u32 K, u8 rank, u32 dims[rank],
//             u8 bit_width, u32 count, packed bytes
//   Response: u32 request_id, u8 kind (0 tensor | 1 scalar);
//             tensor: u8 rank, u32 dims[rank], f64 data[product]
//             scalar: f64
//   Error:    u32 code, u32 length, message bytes
//   TopK:     u32 request_id, u32 rows, u32 dims, u32 k,
//             rows*k x (u16 index, u16 binary16 value)
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kWireMagic0 = 0x53;
inline constexpr std::uint8_t kWireMagic1 = 0x51;
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 8;
inline constexpr std::uint32_t kMaxFrameBody = 1u << 28;  // decode-side sanity cap

enum class FrameType : std::uint8_t { Hello = 0, Features = 1, Response = 2, Error = 3, TopK = 4 };

// Server error codes carried in Error frames.
inline constexpr std::uint32_t kErrProtocol = 1;  // malformed or out-of-order frame
inline constexpr std::uint32_t kErrVersion = 2;   // protocol version mismatch
inline constexpr std::uint32_t kErrConfig = 3;    // K or shape contract mismatch
inline constexpr std::uint32_t kErrCorrupt = 4;   // indices outside {0..K-1}

struct HelloBody {
    std::uint8_t protocol_version = kWireVersion;
    std::uint32_t levels = 0;
    std::vector<std::uint32_t> shape;
    bool operator==(const HelloBody&) const = default;
};

struct FeaturesBody {
    std::uint32_t request_id = 0;
    std::uint32_t levels = 0;
    std::vector<std::uint32_t> shape;
    PackedIndices packed;
};

struct ResponseBody {
    std::uint32_t request_id = 0;
    bool is_scalar = false;
    FeatureTensor tensor;  // valid when !is_scalar
    double scalar = 0.0;   // valid when is_scalar
};

struct ErrorBody {
    std::uint32_t code = 0;
    std::string message;
    bool operator==(const ErrorBody&) const = default;
};

struct TopKEntry {
    std::uint16_t index = 0;
    std::uint16_t value_half = 0;  // binary16 bits
    bool operator==(const TopKEntry&) const = default;
};

struct TopKBody {
    std::uint32_t request_id = 0;
    std::uint32_t rows = 0;
    std::uint32_t dims = 0;
    std::uint32_t k = 0;
    std::vector<TopKEntry> entries;  // rows * k, row-major
    bool operator==(const TopKBody&) const = default;
};

struct WireFrame {
    FrameType type = FrameType::Error;
    std::variant<HelloBody, FeaturesBody, ResponseBody, ErrorBody, TopKBody> body;

    static WireFrame hello(HelloBody b) { return {FrameType::Hello, std::move(b)}; }
    static WireFrame features(FeaturesBody b) { return {FrameType::Features, std::move(b)}; }
    static WireFrame response(ResponseBody b) { return {FrameType::Response, std::move(b)}; }
    static WireFrame error(ErrorBody b) { return {FrameType::Error, std::move(b)}; }
    static WireFrame topk(TopKBody b) { return {FrameType::TopK, std::move(b)}; }
};

namespace detail {

inline void put_shape(std::vector<std::uint8_t>& out, const std::vector<std::uint32_t>& shape) {
    if (shape.empty() || shape.size() > 3) throw CodecError("shape rank must be 1..3");
    bytes::put_u8(out, static_cast<std::uint8_t>(shape.size()));
    for (std::uint32_t d : shape) bytes::put_u32le(out, d);
}

inline std::vector<std::uint32_t> get_shape(bytes::Reader& r) {
    const std::uint8_t rank = r.u8();
    if (rank == 0 || rank > 3) throw CodecError("shape rank must be 1..3");
    std::vector<std::uint32_t> shape(rank);
    for (std::uint8_t i = 0; i < rank; ++i) {
        shape[i] = r.u32le();
        if (shape[i] == 0) throw CodecError("zero dimension");
    }
    return shape;
}

inline std::vector<std::uint8_t> encode_body(const WireFrame& f) {
    std::vector<std::uint8_t> b;
    switch (f.type) {
        case FrameType::Hello: {
            const auto& h = std::get<HelloBody>(f.body);
            bytes::put_u8(b, h.protocol_version);
            bytes::put_u32le(b, h.levels);
            put_shape(b, h.shape);
            break;
        }
        case FrameType::Features: {
            const auto& ft = std::get<FeaturesBody>(f.body);
            bytes::put_u32le(b, ft.request_id);
            bytes::put_u32le(b, ft.levels);
            put_shape(b, ft.shape);
            if (ft.packed.bytes.size() !=
                PackedIndices::byte_length(ft.packed.count, ft.packed.bit_width))
                throw CodecError("truncated payload");
            bytes::put_u8(b, static_cast<std::uint8_t>(ft.packed.bit_width));
            bytes::put_u32le(b, static_cast<std::uint32_t>(ft.packed.count));
            b.insert(b.end(), ft.packed.bytes.begin(), ft.packed.bytes.end());
            break;
        }
        case FrameType::Response: {
            const auto& rsp = std::get<ResponseBody>(f.body);
            bytes::put_u32le(b, rsp.request_id);
            bytes::put_u8(b, rsp.is_scalar ? 1 : 0);
            if (rsp.is_scalar) {
                bytes::put_f64le(b, rsp.scalar);
            } else {
                std::vector<std::uint32_t> shape(rsp.tensor.shape().begin(),
                                                 rsp.tensor.shape().end());
                put_shape(b, shape);
                for (double v : rsp.tensor.data()) bytes::put_f64le(b, v);
            }
            break;
        }
        case FrameType::Error: {
            const auto& e = std::get<ErrorBody>(f.body);
            bytes::put_u32le(b, e.code);
            bytes::put_u32le(b, static_cast<std::uint32_t>(e.message.size()));
            b.insert(b.end(), e.message.begin(), e.message.end());
            break;
        }
        case FrameType::TopK: {
            const auto& t = std::get<TopKBody>(f.body);
            if (t.entries.size() != static_cast<std::size_t>(t.rows) * t.k)
                throw CodecError("top-k entry count mismatch");
            bytes::put_u32le(b, t.request_id);
            bytes::put_u32le(b, t.rows);
            bytes::put_u32le(b, t.dims);
            bytes::put_u32le(b, t.k);
            for (const TopKEntry& e : t.entries) {
                bytes::put_u16le(b, e.index);
                bytes::put_u16le(b, e.value_half);
            }
            break;
        }
    }
    return b;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_frame(const WireFrame& f) {
    std::vector<std::uint8_t> body = detail::encode_body(f);
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderBytes + body.size());
    bytes::put_u8(out, kWireMagic0);
    bytes::put_u8(out, kWireMagic1);
    bytes::put_u8(out, kWireVersion);
    bytes::put_u8(out, static_cast<std::uint8_t>(f.type));
    bytes::put_u32le(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

inline WireFrame decode_frame(std::span<const std::uint8_t> data) {
    try {
        bytes::Reader r(data.data(), data.size());
        if (r.remaining() < kFrameHeaderBytes) throw CodecError("length mismatch");
        if (r.u8() != kWireMagic0 || r.u8() != kWireMagic1) throw CodecError("bad magic");
        if (r.u8() != kWireVersion) throw CodecError("unsupported version");
        const std::uint8_t type_raw = r.u8();
        if (type_raw > static_cast<std::uint8_t>(FrameType::TopK))
            throw CodecError("unknown frame type");
        const std::uint32_t body_len = r.u32le();
        if (body_len > kMaxFrameBody) throw CodecError("length mismatch");
        if (r.remaining() != body_len) throw CodecError("length mismatch");

        const FrameType type = static_cast<FrameType>(type_raw);
        WireFrame f;
        f.type = type;
        switch (type) {
            case FrameType::Hello: {
                HelloBody h;
                h.protocol_version = r.u8();
                h.levels = r.u32le();
                h.shape = detail::get_shape(r);
                f.body = std::move(h);
                break;
            }
            case FrameType::Features: {
                FeaturesBody ft;
                ft.request_id = r.u32le();
                ft.levels = r.u32le();
                ft.shape = detail::get_shape(r);
                ft.packed.bit_width = r.u8();
                if (ft.packed.bit_width < 1 || ft.packed.bit_width > 8)
                    throw CodecError("bit width must be in [1, 8]");
                ft.packed.count = r.u32le();
                const std::size_t expect =
                    PackedIndices::byte_length(ft.packed.count, ft.packed.bit_width);
                if (r.remaining() != expect) throw CodecError("truncated payload");
                ft.packed.bytes = r.raw(expect);
                f.body = std::move(ft);
                break;
            }
            case FrameType::Response: {
                ResponseBody rsp;
                rsp.request_id = r.u32le();
                const std::uint8_t kind = r.u8();
                if (kind > 1) throw CodecError("unknown response kind");
                rsp.is_scalar = kind == 1;
                if (rsp.is_scalar) {
                    rsp.scalar = r.f64le();
                } else {
                    auto shape32 = detail::get_shape(r);
                    std::vector<std::size_t> shape(shape32.begin(), shape32.end());
                    std::size_t n = 1;
                    for (std::size_t d : shape) {
                        if (d != 0 && n > kMaxFrameBody / d) throw CodecError("truncated payload");
                        n *= d;
                    }
                    if (r.remaining() != n * 8) throw CodecError("truncated payload");
                    std::vector<double> vals(n);
                    for (std::size_t i = 0; i < n; ++i) vals[i] = r.f64le();
                    rsp.tensor = FeatureTensor(std::move(shape), std::move(vals));
                }
                f.body = std::move(rsp);
                break;
            }
            case FrameType::Error: {
                ErrorBody e;
                e.code = r.u32le();
                const std::uint32_t len = r.u32le();
                if (r.remaining() != len) throw CodecError("truncated payload");
                auto raw = r.raw(len);
                e.message.assign(raw.begin(), raw.end());
                f.body = std::move(e);
                break;
            }
            case FrameType::TopK: {
                TopKBody t;
                t.request_id = r.u32le();
                t.rows = r.u32le();
                t.dims = r.u32le();
                t.k = r.u32le();
                if (t.k == 0 || t.dims == 0 || t.rows == 0 || t.k > t.dims)
                    throw CodecError("bad top-k header");
                const std::uint64_t n = static_cast<std::uint64_t>(t.rows) * t.k;
                if (r.remaining() != n * 4) throw CodecError("truncated payload");
                t.entries.resize(n);
                for (std::uint64_t i = 0; i < n; ++i) {
                    t.entries[i].index = r.u16le();
                    t.entries[i].value_half = r.u16le();
                }
                f.body = std::move(t);
                break;
            }
        }
        return f;
    } catch (const std::out_of_range&) {
        throw CodecError("truncated payload");
    } catch (const std::invalid_argument& e) {
        throw CodecError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Compression accounting (baseline: FP16, 16 bits per element)
// ---------------------------------------------------------------------------

enum class CompressionMethod { Discrete, TopK };

/// Nominal compression rate: 16/b for fixed-width discrete codes, dims/k for
/// top-k sparsification.
inline double compression_rate(CompressionMethod method, std::size_t bits_or_k,
                               std::size_t dims) {
    if (bits_or_k == 0) throw std::invalid_argument("zero divisor");
    if (method == CompressionMethod::Discrete) return 16.0 / static_cast<double>(bits_or_k);
    if (dims == 0) throw std::invalid_argument("dims must be positive");
    return static_cast<double>(dims) / static_cast<double>(bits_or_k);
}

/// Empirical ratio of the FP16 raw size to the bytes actually transmitted
/// (headers included).
inline double measured_ratio(std::size_t features_bytes_fp16, std::size_t frame_bytes) {
    if (features_bytes_fp16 == 0 || frame_bytes == 0)
        throw std::invalid_argument("sizes must be positive");
    return static_cast<double>(features_bytes_fp16) / static_cast<double>(frame_bytes);
}

}  // namespace splitquant
