#ifndef SOUNDSPRING_IO_HPP
#define SOUNDSPRING_IO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "token_grid.hpp"
#include "toy_codec.hpp"

namespace soundspring {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::string& path, const std::string& text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::string read_text(const std::string& path) {
    auto b = read_file(path);
    return {b.begin(), b.end()};
}

/// 16-bit PCM mono WAV.
inline std::vector<std::uint8_t> encode_wav(const AudioSignal& a) {
    ByteWriter w;
    const auto data_bytes = static_cast<std::uint32_t>(a.size() * 2);
    w.tag("RIFF");
    w.u32(36 + data_bytes);
    w.tag("WAVE");
    w.tag("fmt ");
    w.u32(16);
    w.u16(1);
    w.u16(1);
    w.u32(static_cast<std::uint32_t>(a.sample_rate));
    w.u32(static_cast<std::uint32_t>(a.sample_rate) * 2);
    w.u16(2);
    w.u16(16);
    w.tag("data");
    w.u32(data_bytes);
    for (double v : a.samples) {
        const auto s = static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0));
        w.u16(static_cast<std::uint16_t>(s));
    }
    return w.take();
}

inline AudioSignal decode_wav(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_tag("RIFF");
    r.u32();
    r.expect_tag("WAVE");
    AudioSignal a;
    int channels = 0, bits = 0;
    while (r.remaining() >= 8) {
        auto id = r.bytes(4);
        const std::uint32_t len = r.u32();
        const std::string tag(id.begin(), id.end());
        auto body = r.bytes(std::min<std::size_t>(len, r.remaining()));
        if (len % 2 && r.remaining() > 0) r.u8();
        ByteReader c(body);
        if (tag == "fmt ") {
            if (c.u16() != 1) throw FormatError("only PCM WAV is supported");
            channels = c.u16();
            a.sample_rate = static_cast<int>(c.u32());
            c.u32();
            c.u16();
            bits = c.u16();
        } else if (tag == "data") {
            if (channels != 1 || bits != 16) throw FormatError("only 16-bit mono WAV is supported");
            a.samples.reserve(body.size() / 2);
            while (c.remaining() >= 2) a.samples.push_back(static_cast<std::int16_t>(c.u16()) / 32767.0);
            return a;
        }
    }
    throw FormatError("WAV has no data chunk");
}

/// Headerless little-endian float32 samples.
inline std::vector<std::uint8_t> encode_raw_f32(const AudioSignal& a) {
    ByteWriter w;
    for (double v : a.samples) w.f32(static_cast<float>(v));
    return w.take();
}

inline AudioSignal decode_raw_f32(std::span<const std::uint8_t> bytes, int sample_rate = 16000) {
    if (bytes.size() % 4) throw FormatError("raw float32 size is not a multiple of 4");
    ByteReader r(bytes);
    AudioSignal a;
    a.sample_rate = sample_rate;
    while (r.remaining() > 0) a.samples.push_back(r.f32());
    return a;
}

inline AudioSignal load_audio(const std::string& path, int sample_rate = 16000) {
    auto bytes = read_file(path);
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".wav") return decode_wav(bytes);
    return decode_raw_f32(bytes, sample_rate);
}

/// Token grid file: "TOKG", u32 frames, u16 layers, u16 vocab, u8 level per
/// frame, then u16 tokens frame-major (all layers, zeros above the level).
inline std::vector<std::uint8_t> serialize_grid(const TokenGrid& g) {
    ByteWriter w;
    w.tag("TOKG");
    w.u32(static_cast<std::uint32_t>(g.frames()));
    w.u16(static_cast<std::uint16_t>(g.n_layers()));
    w.u16(static_cast<std::uint16_t>(g.vocab()));
    for (auto lv : g.levels()) w.u8(lv);
    for (std::size_t t = 0; t < g.frames(); ++t) {
        for (int k = 0; k < g.n_layers(); ++k) w.u16(k < g.level(t) ? g.at(t, k) : 0);
    }
    return w.take();
}

inline TokenGrid deserialize_grid(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_tag("TOKG");
    const std::uint32_t frames = r.u32();
    const int layers = r.u16();
    const int vocab = r.u16();
    if (bytes.size() != 12 + frames + static_cast<std::size_t>(frames) * layers * 2) {
        throw FormatError("token grid size mismatch");
    }
    TokenGrid g(frames, layers, vocab, 0);
    for (std::uint32_t t = 0; t < frames; ++t) g.set_level(t, r.u8());
    for (std::uint32_t t = 0; t < frames; ++t) {
        for (int k = 0; k < layers; ++k) {
            const auto v = r.u16();
            if (v >= vocab) throw FormatError("token outside the vocabulary");
            g.at(t, k) = v;
        }
    }
    return g;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_IO_HPP
