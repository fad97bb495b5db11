#pragma once

// Named-tensor archive.
//
//   "HMAT" | u8 version (1) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 extents |
//               row-major f32 values
//   u32 CRC-32 of every preceding byte
//
// All integers and floats are little-endian.

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "hmat/config.hpp"
#include "hmat/errors.hpp"
#include "hmat/params.hpp"

namespace hmat::checkpoint {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr char kMagic[4] = {'H', 'M', 'A', 'T'};

namespace detail {

inline void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
   public:
    explicit Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}
    std::uint8_t u8() {
        need(1);
        return b_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return end_ - pos_; }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > end_) throw DataError("checkpoint truncated");
    }
    const std::vector<std::uint8_t>& b_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const ParamStore<float>& store) {
    std::vector<std::uint8_t> b(std::begin(kMagic), std::end(kMagic));
    detail::put_u8(b, kVersion);
    detail::put_u32(b, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store) {
        if (name.size() > 0xFFFF) throw DataError("tensor name too long: " + name);
        detail::put_u16(b, static_cast<std::uint16_t>(name.size()));
        b.insert(b.end(), name.begin(), name.end());
        if (t.rank() > 0xFF) throw DataError("tensor rank too large: " + name);
        detail::put_u8(b, static_cast<std::uint8_t>(t.rank()));
        for (auto e : t.shape()) detail::put_u32(b, static_cast<std::uint32_t>(e));
        for (float v : t.data()) detail::put_u32(b, std::bit_cast<std::uint32_t>(v));
    }
    detail::put_u32(b, detail::crc(b.data(), b.size()));
    return b;
}

inline ParamStore<float> deserialize(const std::vector<std::uint8_t>& b) {
    if (b.size() < 4 + 1 + 4 + 4) throw DataError("checkpoint too short");
    const std::size_t body = b.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(b[body + i]) << (8 * i);
    if (detail::crc(b.data(), body) != stored) throw DataError("checkpoint CRC mismatch");

    detail::Reader r(b, body);
    if (r.str(4) != std::string(kMagic, 4)) throw DataError("not an HMAT checkpoint (bad magic)");
    const auto version = r.u8();
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.u32();
    ParamStore<float> store;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name = r.str(r.u16());
        const auto rank = r.u8();
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& e : shape) {
            e = r.u32();
            if (e == 0) throw DataError("checkpoint tensor '" + name + "' has a zero extent");
            n *= e;
            if (n > r.remaining() / 4) throw DataError("checkpoint truncated");
        }
        std::vector<float> values(n);
        for (auto& v : values) {
            v = std::bit_cast<float>(r.u32());
            if (!std::isfinite(v)) throw DataError("checkpoint tensor '" + name + "' holds a non-finite value");
        }
        if (store.contains(name)) throw DataError("checkpoint repeats tensor '" + name + "'");
        store.add(name, Tensor<float>::from(std::move(shape), std::move(values), true));
    }
    if (r.pos() != body) throw DataError("checkpoint has trailing bytes before the CRC");
    return store;
}

inline void save(const std::string& path, const ParamStore<float>& store) {
    const auto bytes = serialize(store);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline ParamStore<float> load(const std::string& path) { return deserialize(read_bytes(path)); }

/// Recovers the architecture from tensor names and extents.
inline ModelConfig infer_model_config(const ParamStore<float>& s) {
    ModelConfig c;
    c.channels = {s.get("enc.stem.mix.w").dim(0), s.get("enc.down2.mix.w").dim(0), s.get("enc.down3.mix.w").dim(0)};
    const auto& phi2 = s.get("enc.stem.phi2.w");
    c.kernel = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(phi2.dim(0)))));
    c.kernel_hidden = phi2.dim(1);
    c.blocks = 0;
    while (s.contains("bottleneck.block" + std::to_string(c.blocks) + ".norm1.g")) ++c.blocks;
    if (c.blocks > 0) {
        const auto& rb = s.get("bottleneck.block0.attn.rel_bias");
        c.heads = rb.dim(1);
        c.window = (static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(rb.dim(0))))) + 1) / 2;
        c.ffn_expansion = s.get("bottleneck.block0.ffn1.w").dim(0) / c.channels[2];
    }
    c.z_dim = s.get("style.lat1.w").dim(1);
    c.style_dim = s.get("style.fuse1.w").dim(0);
    c.mask_encoder_channels = {s.get("style.shape1.w").dim(0), s.get("style.shape2.w").dim(0),
                               s.get("style.shape3.w").dim(0)};
    StyleDims d{s.get("style.sem.w").dim(0), s.get("style.lat1.w").dim(0), s.get("style.shape_fc.w").dim(0), "custom"};
    for (const auto* name : {"Baseline", "EqualCapacity", "HeavySemanticBias"}) {
        auto p = StyleDims::preset(name);
        if (p.img == d.img && p.latent == d.latent && p.mask == d.mask) d.name = name;
        auto q = p.scaled_down(8);
        if (d.name == "custom" && q.img == d.img && q.latent == d.latent && q.mask == d.mask) d.name = name;
    }
    c.style = d;
    const auto toy = ModelConfig::toy();
    c.preset = c.channels == toy.channels ? "toy" : (c.channels == ModelConfig::full().channels ? "full" : "custom");
    return c;
}

}  // namespace hmat::checkpoint
