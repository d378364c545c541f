#ifndef SOUNDSPRING_TRANSPORT_HPP
#define SOUNDSPRING_TRANSPORT_HPP

#include <zlib.h>

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "dependency.hpp"
#include "entropy_coder.hpp"
#include "token_grid.hpp"

namespace soundspring {

inline constexpr std::uint16_t kPacketMagic = 0x5053;  // "SP" on the wire
inline constexpr std::uint8_t kPacketVersion = 1;
inline constexpr std::size_t kPacketHeaderSize = 24;
inline constexpr std::uint8_t kFlagFec = 0x01;

struct PacketHeader {
    std::uint8_t version = kPacketVersion;
    std::uint8_t flags = 0;
    std::uint32_t gos_id = 0;
    std::uint8_t unit = 0;
    std::uint8_t group = 0;
    std::uint32_t first_frame = 0;
    std::uint16_t n_frames = 0;
    std::uint16_t payload_len = 0;
    std::uint16_t fec_len = 0;
    std::uint32_t crc32 = 0;
};

struct Packet {
    PacketHeader header;
    std::vector<std::uint8_t> payload;
    std::vector<std::uint8_t> fec;

    SliceId id() const { return {header.gos_id, header.unit, header.group}; }
};

using WirePacket = std::vector<std::uint8_t>;

namespace detail {

inline void write_header(ByteWriter& w, const PacketHeader& h, std::uint32_t crc) {
    w.u16(kPacketMagic);
    w.u8(h.version);
    w.u8(h.flags);
    w.u32(h.gos_id);
    w.u8(h.unit);
    w.u8(h.group);
    w.u32(h.first_frame);
    w.u16(h.n_frames);
    w.u16(h.payload_len);
    w.u16(h.fec_len);
    w.u32(crc);
}

inline std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace detail

/// Serializes a packet; lengths and the CRC (over header with a zero CRC
/// field, payload and fec) are filled in here.
inline WirePacket serialize_packet(Packet& p) {
    if (p.payload.size() > 0xFFFF || p.fec.size() > 0xFFFF) throw ConfigError("slice too large for one packet");
    p.header.payload_len = static_cast<std::uint16_t>(p.payload.size());
    p.header.fec_len = static_cast<std::uint16_t>(p.fec.size());
    p.header.flags = p.fec.empty() ? 0 : kFlagFec;
    ByteWriter w;
    detail::write_header(w, p.header, 0);
    w.bytes(p.payload);
    w.bytes(p.fec);
    auto bytes = w.take();
    p.header.crc32 = detail::crc_of(bytes);
    for (int i = 0; i < 4; ++i) bytes[20 + i] = static_cast<std::uint8_t>(p.header.crc32 >> (8 * i));
    return bytes;
}

/// Parses a wire packet. Malformed headers, length mismatches and CRC
/// failures all yield nullopt: the packet counts as lost.
inline std::optional<Packet> parse_packet(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPacketHeaderSize) return std::nullopt;
    ByteReader r(bytes);
    Packet p;
    if (r.u16() != kPacketMagic) return std::nullopt;
    p.header.version = r.u8();
    if (p.header.version != kPacketVersion) return std::nullopt;
    p.header.flags = r.u8();
    p.header.gos_id = r.u32();
    p.header.unit = r.u8();
    p.header.group = r.u8();
    p.header.first_frame = r.u32();
    p.header.n_frames = r.u16();
    p.header.payload_len = r.u16();
    p.header.fec_len = r.u16();
    p.header.crc32 = r.u32();
    if (bytes.size() != kPacketHeaderSize + p.header.payload_len + p.header.fec_len) return std::nullopt;
    if (((p.header.flags & kFlagFec) != 0) != (p.header.fec_len > 0)) return std::nullopt;
    std::vector<std::uint8_t> zeroed(bytes.begin(), bytes.end());
    for (int i = 0; i < 4; ++i) zeroed[20 + i] = 0;
    if (detail::crc_of(zeroed) != p.header.crc32) return std::nullopt;
    auto payload = r.bytes(p.header.payload_len);
    p.payload.assign(payload.begin(), payload.end());
    auto fec = r.bytes(p.header.fec_len);
    p.fec.assign(fec.begin(), fec.end());
    return p;
}

/// Packs the tokens of `cells` at `bits` bits each, LSB first.
inline std::vector<std::uint8_t> pack_tokens(const TokenGrid& grid, const std::vector<Cell>& cells, int bits) {
    std::vector<std::uint8_t> out((cells.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
    std::size_t pos = 0;
    for (const Cell& c : cells) {
        const std::uint32_t v = grid.at(c.t, c.k);
        for (int b = 0; b < bits; ++b, ++pos) {
            if ((v >> b) & 1u) out[pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8));
        }
    }
    return out;
}

/// Inverse of pack_tokens. Returns false on a size mismatch or a token
/// outside the vocabulary.
inline bool unpack_tokens(std::span<const std::uint8_t> bytes, const std::vector<Cell>& cells, int bits,
                          TokenGrid& grid) {
    if (bytes.size() != (cells.size() * static_cast<std::size_t>(bits) + 7) / 8) return false;
    std::size_t pos = 0;
    std::vector<std::uint16_t> vals(cells.size());
    for (auto& v : vals) {
        std::uint32_t x = 0;
        for (int b = 0; b < bits; ++b, ++pos) x |= static_cast<std::uint32_t>((bytes[pos / 8] >> (pos % 8)) & 1u) << b;
        if (x >= static_cast<std::uint32_t>(grid.vocab())) return false;
        v = static_cast<std::uint16_t>(x);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) grid.at(cells[i].t, cells[i].k) = vals[i];
    return true;
}

struct FecPolicy {
    bool enabled = true;
};

/// Builds the packet of one slice. `fec_source` is the coarse slice whose raw
/// copy rides along (the previous coarse slice in emission order), if any.
inline Packet make_packet(const SliceGrid& sg, std::uint32_t slice, const TokenGrid& grid,
                          const std::optional<CodedSlice>& coded, std::optional<std::uint32_t> fec_source) {
    const Slice& s = sg.slices[slice];
    Packet p;
    p.header.gos_id = s.id.gos;
    p.header.unit = static_cast<std::uint8_t>(s.id.unit);
    p.header.group = static_cast<std::uint8_t>(s.id.group);
    p.header.first_frame = s.frames.front();
    p.header.n_frames = static_cast<std::uint16_t>(s.frames.size());
    const int bits = bits_for_vocab(grid.vocab());
    if (s.coarse()) {
        p.payload = pack_tokens(grid, s.cells, bits);
        if (fec_source) p.fec = pack_tokens(grid, sg.slices[*fec_source].cells, bits);
    } else {
        if (!coded) throw ConfigError("missing coded payload for fine slice " + to_string(s.id));
        if (coded->n_symbols != s.cells.size()) throw ShapeError("coded payload symbol count mismatch");
        p.payload = coded->bytes;
    }
    return p;
}

/// Packets in emission order. `coded` is indexed by slice; coarse entries are
/// ignored.
inline std::vector<WirePacket> packetize(const SliceGrid& sg, const TokenGrid& grid,
                                         const std::vector<std::uint32_t>& order,
                                         const std::vector<std::optional<CodedSlice>>& coded, const FecPolicy& fec) {
    if (coded.size() != sg.slices.size()) throw ShapeError("one coded entry per slice required");
    std::vector<WirePacket> out;
    out.reserve(order.size());
    std::optional<std::uint32_t> prev_coarse;
    for (auto i : order) {
        const bool coarse = sg.slices[i].coarse();
        auto p = make_packet(sg, i, grid, coded[i], coarse && fec.enabled ? prev_coarse : std::nullopt);
        out.push_back(serialize_packet(p));
        if (coarse) prev_coarse = i;
    }
    return out;
}

// Channel models ------------------------------------------------------------

using ChannelTrace = std::vector<std::uint8_t>;  // 1 = lost

struct ChannelConfig {
    enum class Type { Bernoulli, Markov } type = Type::Markov;
    double p = 0.1;  // Bernoulli loss probability
    // good / degraded / bad
    std::array<std::array<double, 3>, 3> matrix{{{0.97, 0.02, 0.01}, {0.10, 0.85, 0.05}, {0.10, 0.10, 0.80}}};
    std::array<double, 3> loss{0.01, 0.30, 0.95};
    std::uint64_t seed = 1;

    static ChannelConfig bernoulli(double p, std::uint64_t seed = 1) {
        ChannelConfig c;
        c.type = Type::Bernoulli;
        c.p = p;
        c.seed = seed;
        return c;
    }

    void validate() const {
        auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (type == Type::Bernoulli) {
            if (!prob(p)) throw ConfigError("loss probability must lie in [0, 1]");
            return;
        }
        for (const auto& row : matrix) {
            double sum = 0;
            for (double v : row) {
                if (!prob(v)) throw ConfigError("transition probability outside [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("transition matrix rows must sum to 1");
        }
        for (double v : loss) {
            if (!prob(v)) throw ConfigError("per-state loss outside [0, 1]");
        }
    }
};

/// Stationary distribution pi P = pi of the Markov chain.
inline std::array<double, 3> stationary_distribution(const ChannelConfig& c) {
    c.validate();
    Eigen::Matrix3d a;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) a(i, j) = c.matrix[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    }
    a -= Eigen::Matrix3d::Identity();
    a.row(2).setOnes();
    Eigen::Vector3d rhs(0, 0, 1);
    Eigen::Vector3d pi = a.fullPivLu().solve(rhs);
    if (!pi.allFinite() || (pi.array() < -1e-12).any()) throw ConfigError("Markov chain has no unique stationary law");
    return {std::max(0.0, pi(0)), std::max(0.0, pi(1)), std::max(0.0, pi(2))};
}

inline double stationary_loss(const ChannelConfig& c) {
    if (c.type == ChannelConfig::Type::Bernoulli) return c.p;
    const auto pi = stationary_distribution(c);
    return pi[0] * c.loss[0] + pi[1] * c.loss[1] + pi[2] * c.loss[2];
}

/// Expected length of a run of consecutive losses, P(L) / P(no loss, then loss).
inline double expected_burst_length(const ChannelConfig& c) {
    if (c.type == ChannelConfig::Type::Bernoulli) return c.p >= 1.0 ? INFINITY : 1.0 / (1.0 - c.p);
    const auto pi = stationary_distribution(c);
    double onset = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) onset += pi[i] * (1.0 - c.loss[i]) * c.matrix[i][j] * c.loss[j];
    }
    return stationary_loss(c) / onset;
}

namespace detail {

inline std::size_t draw_state(Rng& rng, std::span<const double> probs) {
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        if (u < probs[i]) return i;
        u -= probs[i];
    }
    return probs.size() - 1;
}

}  // namespace detail

/// Per-packet loss flags; the Markov walk starts from its stationary law.
inline ChannelTrace generate_trace(const ChannelConfig& c, std::size_t n_packets, std::uint64_t seed) {
    c.validate();
    ChannelTrace trace(n_packets, 0);
    Rng rng(seed);
    if (c.type == ChannelConfig::Type::Bernoulli) {
        for (auto& lost : trace) lost = rng.uniform() < c.p ? 1 : 0;
        return trace;
    }
    const auto pi = stationary_distribution(c);
    std::size_t state = detail::draw_state(rng, pi);
    for (auto& lost : trace) {
        lost = rng.uniform() < c.loss[state] ? 1 : 0;
        state = detail::draw_state(rng, c.matrix[state]);
    }
    return trace;
}

inline ChannelTrace generate_trace(const ChannelConfig& c, std::size_t n_packets) {
    return generate_trace(c, n_packets, c.seed);
}

// Receiver side -------------------------------------------------------------

struct Depacketized {
    TokenGrid tokens;
    TokenStateGrid states;                      // coarse R/L, fine L or pending (I)
    std::vector<std::optional<CodedSlice>> coded;  // delivered fine payloads, by slice
    std::vector<char> delivered;                // by slice
    std::size_t fec_recoveries = 0;
    std::size_t discarded = 0;  // delivered but failed parsing / CRC
};

/// Applies `trace` to `packets` (aligned, 1 = lost) and labels the grid.
/// `order` is the emission order the sender used; it tells which coarse
/// slice each FEC copy protects.
inline Depacketized depacketize(std::span<const WirePacket> packets, const ChannelTrace& trace, const SliceGrid& sg,
                                const std::vector<std::uint8_t>& levels, int vocab,
                                const std::vector<std::uint32_t>& order, const FecPolicy& fec) {
    if (trace.size() != packets.size()) throw ShapeError("trace length must equal packet count");
    Depacketized out;
    out.tokens = TokenGrid(sg.n_frames, sg.n_layers, vocab, 0);
    for (std::size_t t = 0; t < sg.n_frames; ++t) out.tokens.set_level(t, levels[t]);
    out.states = TokenStateGrid(sg.n_frames, sg.n_layers, TokenState::I);
    out.coded.assign(sg.slices.size(), std::nullopt);
    out.delivered.assign(sg.slices.size(), 0);
    const int bits = bits_for_vocab(vocab);

    std::vector<std::optional<std::uint32_t>> protector_of(sg.slices.size());  // coarse slice -> FEC carrier
    {
        std::optional<std::uint32_t> prev;
        for (auto i : order) {
            if (!sg.slices[i].coarse()) continue;
            if (prev) protector_of[*prev] = i;
            prev = i;
        }
    }
    std::vector<std::optional<Packet>> got(sg.slices.size());
    for (std::size_t i = 0; i < packets.size(); ++i) {
        if (trace[i]) continue;
        auto p = parse_packet(packets[i]);
        if (!p) {
            ++out.discarded;
            continue;
        }
        const auto idx = sg.find(p->id());
        if (!idx || got[*idx]) {
            ++out.discarded;
            continue;
        }
        got[*idx] = std::move(*p);
    }

    for (std::size_t i = 0; i < sg.slices.size(); ++i) {
        const Slice& s = sg.slices[i];
        bool ok = false;
        if (got[i]) {
            if (s.coarse()) {
                ok = unpack_tokens(got[i]->payload, s.cells, bits, out.tokens);
            } else if (got[i]->payload.size() > 0) {
                out.coded[i] = CodedSlice{got[i]->payload, static_cast<std::uint32_t>(s.cells.size())};
                ok = true;
            }
        }
        if (!ok && s.coarse() && fec.enabled && protector_of[i] && got[*protector_of[i]]) {
            ok = unpack_tokens(got[*protector_of[i]]->fec, s.cells, bits, out.tokens);
            if (ok) ++out.fec_recoveries;
        }
        out.delivered[i] = ok ? 1 : 0;
        for (const Cell& c : s.cells) {
            out.states.at(c.t, c.k) = ok ? (s.coarse() ? TokenState::R : TokenState::I) : TokenState::L;
        }
    }
    return out;
}

// File formats ----------------------------------------------------------------

/// Packet stream: per packet a u32 length followed by the wire bytes.
inline std::vector<std::uint8_t> write_packet_stream(std::span<const WirePacket> packets) {
    ByteWriter w;
    for (const auto& p : packets) {
        w.u32(static_cast<std::uint32_t>(p.size()));
        w.bytes(p);
    }
    return w.take();
}

inline std::vector<WirePacket> read_packet_stream(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    std::vector<WirePacket> out;
    while (r.remaining() > 0) {
        const auto n = r.u32();
        auto b = r.bytes(n);
        out.emplace_back(b.begin(), b.end());
    }
    return out;
}

/// Trace file: one '0' (delivered) or '1' (lost) per line.
inline std::string write_trace(const ChannelTrace& trace) {
    std::string s;
    s.reserve(trace.size() * 2);
    for (auto v : trace) {
        s += v ? '1' : '0';
        s += '\n';
    }
    return s;
}

inline ChannelTrace read_trace(const std::string& text) {
    ChannelTrace trace;
    std::size_t line = 1;
    for (char ch : text) {
        if (ch == '0' || ch == '1') {
            trace.push_back(ch == '1' ? 1 : 0);
        } else if (ch == '\n') {
            ++line;
        } else if (ch != '\r' && ch != ' ') {
            throw FormatError("trace line " + std::to_string(line) + ": expected 0 or 1");
        }
    }
    return trace;
}

inline nlohmann::json channel_to_json(const ChannelConfig& c) {
    nlohmann::json j;
    j["type"] = c.type == ChannelConfig::Type::Bernoulli ? "bernoulli" : "markov";
    j["p"] = c.p;
    j["matrix"] = c.matrix;
    j["loss"] = c.loss;
    j["seed"] = c.seed;
    return j;
}

inline ChannelConfig channel_from_json(const nlohmann::json& j) {
    ChannelConfig c;
    try {
        const std::string type = j.value("type", std::string("markov"));
        if (type == "bernoulli") {
            c.type = ChannelConfig::Type::Bernoulli;
        } else if (type != "markov") {
            throw ConfigError("channel.type: expected bernoulli or markov");
        }
        if (j.contains("p")) c.p = j.at("p").get<double>();
        if (j.contains("matrix")) c.matrix = j.at("matrix").get<std::array<std::array<double, 3>, 3>>();
        if (j.contains("loss")) c.loss = j.at("loss").get<std::array<double, 3>>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("channel: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_TRANSPORT_HPP
