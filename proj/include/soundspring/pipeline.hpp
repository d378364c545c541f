#ifndef SOUNDSPRING_PIPELINE_HPP
#define SOUNDSPRING_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "common.hpp"
#include "context_model.hpp"
#include "dependency.hpp"
#include "entropy_coder.hpp"
#include "rvq.hpp"
#include "token_grid.hpp"
#include "toy_codec.hpp"
#include "transport.hpp"

namespace soundspring {

/// Everything sender and receiver must agree on besides the model and codec.
struct Layout {
    GosConfig gos;
    SlicingMode mode = SlicingMode::Periodic;
    StreamConfig stream;  // used in streaming mode; gos.gos_len is then T_S
    FecPolicy fec;
    ConcealConfig conceal;

    const StreamConfig* stream_ptr() const { return mode == SlicingMode::Streaming ? &stream : nullptr; }

    // Streaming layout: one GoS per T_S-frame batch, one unit per frame.
    static Layout streaming(const std::vector<int>& fine_bounds, const StreamConfig& sc) {
        sc.validate();
        Layout l;
        l.mode = SlicingMode::Streaming;
        l.stream = sc;
        l.gos.gos_len = sc.stride;
        l.gos.n_units = sc.stride;
        l.gos.fine_bounds = fine_bounds;
        l.gos.key_unit = 0;
        l.conceal.window = sc.conceal_ctx;
        return l;
    }
};

struct SenderReport {
    std::uint64_t coarse_bits = 0;  // bit-packed coarse payloads
    std::uint64_t fine_bits = 0;    // range-coded payloads
    std::uint64_t fec_bits = 0;
    std::uint64_t header_bits = 0;
    std::uint64_t total_bits = 0;
    std::size_t packets = 0;
    std::size_t coarse_tokens = 0;
    std::size_t fine_tokens = 0;
    std::size_t fine_slices = 0;
    // Ideal code length -log2 p per token, averaged per layer (coarse layers
    // report the raw bit width).
    std::vector<double> bits_per_token_by_layer;
    bool untrained_fallback = false;

    double fine_bits_per_token() const {
        return fine_tokens == 0 ? 0.0 : static_cast<double>(fine_bits) / static_cast<double>(fine_tokens);
    }
    double payload_bits() const { return static_cast<double>(coarse_bits + fine_bits + fec_bits); }
};

using QueryObserver = std::function<void(std::uint32_t slice, const MaskedQuery&)>;

/// Phi-mask query of one fine slice: the cells of its condition slices are
/// visible, its own cells are the targets, nothing else is readable.
inline MaskedQuery coding_query(const SliceGrid& sg, const DependencyMatrix& dm, std::uint32_t slice,
                                const TokenGrid& grid) {
    const Slice& s = sg.slices[slice];
    std::uint32_t lo = s.frames.front();
    std::uint32_t hi = s.frames.back() + 1;
    for (auto c : dm.conditions[slice]) {
        lo = std::min(lo, sg.slices[c].frames.front());
        hi = std::max(hi, sg.slices[c].frames.back() + 1);
    }
    MaskedQuery q(grid, lo, hi);
    for (auto c : dm.conditions[slice]) {
        for (const Cell& cell : sg.slices[c].cells) q.reveal(cell.t, cell.k);
    }
    for (const Cell& cell : s.cells) q.add_target(cell);
    return q;
}

struct EncodedStream {
    SliceGrid sg;
    DependencyMatrix dm;
    std::vector<std::uint32_t> order;
    std::vector<WirePacket> packets;
    SenderReport report;
};

namespace detail {

inline void account_packet(SenderReport& rep, const SliceGrid& sg, std::uint32_t slice, const WirePacket& wire) {
    const Slice& s = sg.slices[slice];
    const std::size_t payload = wire.size() - kPacketHeaderSize;
    const std::size_t fec = static_cast<std::size_t>(wire[18]) | (static_cast<std::size_t>(wire[19]) << 8);
    rep.header_bits += 8 * kPacketHeaderSize;
    rep.fec_bits += 8 * fec;
    if (s.coarse()) {
        rep.coarse_bits += 8 * (payload - fec);
        rep.coarse_tokens += s.cells.size();
    } else {
        rep.fine_bits += 8 * payload;
        rep.fine_tokens += s.cells.size();
        ++rep.fine_slices;
    }
    ++rep.packets;
    rep.total_bits = rep.coarse_bits + rep.fine_bits + rep.fec_bits + rep.header_bits;
}

inline CodedSlice encode_slice(const SliceGrid& sg, const DependencyMatrix& dm, std::uint32_t slice,
                               const TokenGrid& grid, const ContextModel& model, const QueryObserver& observer,
                               std::vector<double>& layer_bits, bool& untrained) {
    const MaskedQuery q = coding_query(sg, dm, slice, grid);
    if (observer) observer(slice, q);
    const PmfResult res = model.pmf(q);
    untrained = untrained || res.untrained_fallback;
    std::vector<std::uint16_t> tokens;
    tokens.reserve(q.targets().size());
    for (std::size_t i = 0; i < q.targets().size(); ++i) {
        const Cell& c = q.targets()[i];
        tokens.push_back(grid.at(c.t, c.k));
        layer_bits[c.k] += res.pmfs[i].bits(tokens.back());
    }
    return encode_symbols(tokens, res.pmfs);
}

}  // namespace detail

/// Sender on the token level: slice, build Phi, code every fine slice under
/// its Phi-mask query, packetize in emission order.
inline EncodedStream encode_tokens(const TokenGrid& grid, const Layout& layout, const ContextModel& model,
                                   const QueryObserver& observer = {}) {
    if (model.vocab() != grid.vocab()) throw ConfigError("model and grid disagree on vocab");
    if (layout.gos.n_layers() != grid.n_layers()) throw ConfigError("layout and grid disagree on layer count");
    EncodedStream es;
    es.sg = build_slice_grid(grid.frames(), grid.levels(), layout.gos, layout.mode);
    es.dm = build_coding_dependency(es.sg, layout.stream_ptr());
    es.order = emission_order(es.sg, es.dm);

    std::vector<double> layer_bits(static_cast<std::size_t>(grid.n_layers()), 0.0);
    std::vector<std::size_t> layer_tokens(static_cast<std::size_t>(grid.n_layers()), 0);
    std::vector<std::optional<CodedSlice>> coded(es.sg.slices.size());
    for (auto i : es.order) {
        if (es.sg.slices[i].coarse()) continue;
        coded[i] = detail::encode_slice(es.sg, es.dm, i, grid, model, observer, layer_bits,
                                        es.report.untrained_fallback);
    }
    es.packets = packetize(es.sg, grid, es.order, coded, layout.fec);
    for (std::size_t p = 0; p < es.order.size(); ++p) detail::account_packet(es.report, es.sg, es.order[p], es.packets[p]);

    const int bits = bits_for_vocab(grid.vocab());
    for (std::size_t t = 0; t < grid.frames(); ++t) {
        for (int k = 0; k < grid.level(t); ++k) {
            ++layer_tokens[k];
            if (k < es.sg.n_coarse) layer_bits[k] += bits;
        }
    }
    es.report.bits_per_token_by_layer.resize(layer_bits.size());
    for (std::size_t k = 0; k < layer_bits.size(); ++k) {
        es.report.bits_per_token_by_layer[k] = layer_tokens[k] ? layer_bits[k] / static_cast<double>(layer_tokens[k]) : 0.0;
    }
    return es;
}

/// Audio-level sender: analyze, quantize at the given per-frame levels, code.
inline EncodedStream send(const FeatureSequence& features, const RvqCodec& codec, const ContextModel& model,
                          const Layout& layout, const std::vector<std::uint8_t>& levels,
                          const QueryObserver& observer = {}) {
    return encode_tokens(quantize(features, codec, levels), layout, model, observer);
}

inline EncodedStream send(const FeatureSequence& features, const RvqCodec& codec, const ContextModel& model,
                          const Layout& layout, int level, const QueryObserver& observer = {}) {
    return send(features, codec, model, layout,
                std::vector<std::uint8_t>(features.frames(), static_cast<std::uint8_t>(level)), observer);
}

// Receiver -------------------------------------------------------------------

struct ReceiverReport {
    std::size_t encoded_cells = 0;
    std::size_t r = 0, l = 0, i = 0, c = 0;  // final states over encoded cells
    std::array<std::size_t, 4> case_counts{};  // concealment targets per case
    std::size_t blackout_frames = 0;           // repeat-last-frame fallback
    std::size_t blackout_cells = 0;
    std::size_t fec_recoveries = 0;
    std::size_t coarse_lost_slices = 0;  // after FEC
    std::size_t coarse_slices = 0;
    std::size_t lost_cells_before_conceal = 0;
    std::vector<int> valid_depth;
    bool untrained_fallback = false;
};

struct ReceivedTokens {
    TokenGrid tokens;
    TokenStateGrid states;
    ReceiverReport report;
};

using ConcealObserver = std::function<void(const MaskedQuery&, const std::vector<ConcealTarget>&)>;

/// Receiver state shared by the batch and streaming paths.
class ReceiverCore {
public:
    ReceiverCore(SliceGrid sg, DependencyMatrix dm, std::vector<std::uint8_t> levels, int vocab,
                 const ContextModel& model, const ConcealConfig& conceal)
        : sg_(std::move(sg)), dm_(std::move(dm)), levels_(std::move(levels)), model_(&model), conceal_(conceal) {
        tokens_ = TokenGrid(sg_.n_frames, sg_.n_layers, vocab, 0);
        for (std::size_t t = 0; t < sg_.n_frames; ++t) tokens_.set_level(t, levels_[t]);
        states_ = TokenStateGrid(sg_.n_frames, sg_.n_layers, TokenState::I);
        coded_.assign(sg_.slices.size(), std::nullopt);
        status_.assign(sg_.slices.size(), Status::Pending);
    }

    const SliceGrid& grid() const { return sg_; }
    const DependencyMatrix& dependency() const { return dm_; }
    TokenGrid& tokens() { return tokens_; }
    TokenStateGrid& states() { return states_; }
    ReceiverReport& report() { return report_; }
    ConcealObserver observer;

    void load(Depacketized d) {
        tokens_ = std::move(d.tokens);
        states_ = std::move(d.states);
        coded_ = std::move(d.coded);
        for (std::size_t i = 0; i < sg_.slices.size(); ++i) {
            status_[i] = d.delivered[i] ? (sg_.slices[i].coarse() ? Status::Ok : Status::Payload) : Status::Lost;
        }
        report_.fec_recoveries += d.fec_recoveries;
    }

    // Marks a coarse slice delivered (tokens already in place) or a fine
    // slice's payload as present, or the slice as lost.
    void set_coarse(std::uint32_t i, bool ok) {
        status_[i] = ok ? Status::Ok : Status::Lost;
        for (const Cell& c : sg_.slices[i].cells) states_.at(c.t, c.k) = ok ? TokenState::R : TokenState::L;
    }
    void set_fine(std::uint32_t i, std::optional<CodedSlice> coded) {
        status_[i] = coded ? Status::Payload : Status::Lost;
        coded_[i] = std::move(coded);
        for (const Cell& c : sg_.slices[i].cells) states_.at(c.t, c.k) = coded_[i] ? TokenState::I : TokenState::L;
    }
    bool coarse_ok(std::uint32_t i) const { return status_[i] == Status::Ok; }

    // Decodes a fine slice if its payload arrived and every condition slice
    // was recovered; otherwise its cells stay I (or L when lost).
    void decode(std::uint32_t i) {
        if (status_[i] != Status::Payload) return;
        for (auto c : dm_.conditions[i]) {
            if (status_[c] != Status::Ok) {
                status_[i] = Status::Invalid;
                return;
            }
        }
        const MaskedQuery q = coding_query(sg_, dm_, i, tokens_);
        const PmfResult res = model_->pmf(q);
        report_.untrained_fallback = report_.untrained_fallback || res.untrained_fallback;
        try {
            const auto toks = decode_symbols(*coded_[i], res.pmfs);
            for (std::size_t n = 0; n < toks.size(); ++n) {
                const Cell& c = q.targets()[n];
                tokens_.at(c.t, c.k) = toks[n];
                states_.at(c.t, c.k) = TokenState::R;
            }
            status_[i] = Status::Ok;
        } catch (const DecodeError&) {
            status_[i] = Status::Lost;
            for (const Cell& c : sg_.slices[i].cells) states_.at(c.t, c.k) = TokenState::L;
        }
    }

    // RVQ causality: fine cells above a frame's lowest non-R layer are I.
    void propagate(std::uint32_t lo, std::uint32_t hi) {
        for (std::uint32_t t = lo; t < hi; ++t) {
            int k = 0;
            while (k < levels_[t] && states_.at(t, k) == TokenState::R) ++k;
            for (int j = std::max(k + 1, sg_.n_coarse); j < levels_[t]; ++j) states_.at(t, j) = TokenState::I;
        }
    }

    void conceal(const ConcealmentWindow& w) {
        auto targets = classify_loss(states_, w, sg_, dm_, levels_, conceal_);
        if (targets.empty()) return;
        bool any_coarse = false;
        for (std::uint32_t t = w.lo; t < w.hi && !any_coarse; ++t) {
            for (int k = 0; k < sg_.n_coarse; ++k) any_coarse = any_coarse || states_.at(t, k) == TokenState::R;
        }
        if (!any_coarse) {
            repeat_last_valid(w);
            return;
        }
        const ConcealMask mask = build_conceal_mask(targets, states_, w);
        MaskedQuery q(tokens_, w.lo, w.hi);
        for (const Cell& c : mask.conditions) q.reveal(c.t, c.k);
        for (const auto& tg : targets) q.add_target(tg.cell);
        if (observer) observer(q, targets);
        const PmfResult res = model_->pmf(q);
        report_.untrained_fallback = report_.untrained_fallback || res.untrained_fallback;
        for (std::size_t n = 0; n < targets.size(); ++n) {
            const Cell& c = targets[n].cell;
            tokens_.at(c.t, c.k) = static_cast<std::uint16_t>(res.pmfs[n].argmax());
            states_.at(c.t, c.k) = TokenState::C;
            ++report_.case_counts[static_cast<std::size_t>(targets[n].loss_case) - 1];
        }
    }

    void finalize_report() {
        auto& rep = report_;
        rep.r = rep.l = rep.i = rep.c = rep.encoded_cells = 0;
        rep.valid_depth.assign(sg_.n_frames, 0);
        for (std::size_t t = 0; t < sg_.n_frames; ++t) {
            for (int k = 0; k < levels_[t]; ++k) {
                ++rep.encoded_cells;
                switch (states_.at(t, k)) {
                    case TokenState::R: ++rep.r; break;
                    case TokenState::L: ++rep.l; break;
                    case TokenState::I: ++rep.i; break;
                    case TokenState::C: ++rep.c; break;
                }
            }
            rep.valid_depth[t] = std::min<int>(states_.valid_depth(t), levels_[t]);
        }
        rep.coarse_slices = rep.coarse_lost_slices = 0;
        for (std::size_t i = 0; i < sg_.slices.size(); ++i) {
            if (!sg_.slices[i].coarse()) continue;
            ++rep.coarse_slices;
            if (status_[i] != Status::Ok) ++rep.coarse_lost_slices;
        }
    }

    std::size_t count_lost() const {
        std::size_t n = 0;
        for (std::size_t t = 0; t < sg_.n_frames; ++t) {
            for (int k = 0; k < levels_[t]; ++k) n += states_.at(t, k) == TokenState::L;
        }
        return n;
    }

private:
    enum class Status : std::uint8_t { Pending, Payload, Ok, Invalid, Lost };

    bool fully_valid(std::size_t t) const { return states_.valid_depth(t) >= levels_[t]; }

    // Total blackout: no received coarse token to condition on. Damaged core
    // frames repeat the tokens of the last fully valid earlier frame.
    void repeat_last_valid(const ConcealmentWindow& w) {
        std::optional<std::size_t> src;
        for (std::size_t t = w.core_lo; t-- > 0;) {
            if (fully_valid(t)) {
                src = t;
                break;
            }
        }
        if (!src) return;
        const int depth = states_.valid_depth(*src);
        for (std::uint32_t t = w.core_lo; t < w.core_hi; ++t) {
            if (fully_valid(t)) continue;
            const int top = std::min<int>(levels_[t], depth);
            for (int k = 0; k < top; ++k) {
                if (states_.at(t, k) == TokenState::R) continue;
                tokens_.at(t, k) = tokens_.at(*src, k);
                states_.at(t, k) = TokenState::C;
                ++report_.blackout_cells;
            }
            ++report_.blackout_frames;
        }
    }

    SliceGrid sg_;
    DependencyMatrix dm_;
    std::vector<std::uint8_t> levels_;
    const ContextModel* model_;
    ConcealConfig conceal_;
    TokenGrid tokens_;
    TokenStateGrid states_;
    std::vector<std::optional<CodedSlice>> coded_;
    std::vector<Status> status_;
    ReceiverReport report_;
};

/// Token-level receiver: depacketize, decode fine slices in emission order,
/// propagate invalidity, conceal window by window.
inline ReceivedTokens receive_tokens(std::span<const WirePacket> packets, const ChannelTrace& trace,
                                     const std::vector<std::uint8_t>& levels, const Layout& layout,
                                     const ContextModel& model, const ConcealObserver& observer = {}) {
    SliceGrid sg = build_slice_grid(levels.size(), levels, layout.gos, layout.mode);
    DependencyMatrix dm = build_coding_dependency(sg, layout.stream_ptr());
    auto order = emission_order(sg, dm);
    auto dep = depacketize(packets, trace, sg, levels, model.vocab(), order, layout.fec);
    const auto n_frames = static_cast<std::uint32_t>(levels.size());

    ReceiverCore core(std::move(sg), std::move(dm), levels, model.vocab(), model, layout.conceal);
    core.observer = observer;
    core.load(std::move(dep));
    for (auto i : order) {
        if (!core.grid().slices[i].coarse()) core.decode(i);
    }
    core.propagate(0, n_frames);
    core.report().lost_cells_before_conceal = core.count_lost();
    for (const auto& w : build_conceal_windows(core.states(), levels, layout.conceal.window)) core.conceal(w);
    core.finalize_report();
    return {core.tokens(), core.states(), core.report()};
}

struct ReceivedAudio {
    AudioSignal audio;
    ReceivedTokens tokens;
};

/// Dequantizes each frame's valid prefix and synthesizes audio.
inline AudioSignal render(const ReceivedTokens& rx, const RvqCodec& codec, const CodecConfig& cfg,
                          int sample_rate = 16000) {
    return synthesize(dequantize(rx.tokens, codec, rx.report.valid_depth), cfg, sample_rate);
}

inline ReceivedAudio receive(std::span<const WirePacket> packets, const ChannelTrace& trace,
                             const std::vector<std::uint8_t>& levels, const RvqCodec& codec, const CodecConfig& cfg,
                             const ContextModel& model, const Layout& layout, int sample_rate = 16000) {
    ReceivedAudio out;
    out.tokens = receive_tokens(packets, trace, levels, layout, model);
    out.audio = render(out.tokens, codec, cfg, sample_rate);
    return out;
}

/// Per-GoS level drawn uniformly from `choices` (variable-rate mode).
inline std::vector<std::uint8_t> variable_levels(std::size_t n_frames, int gos_len, const std::vector<int>& choices,
                                                 std::uint64_t seed) {
    if (choices.empty()) throw ConfigError("variable-rate mode needs at least one level");
    Rng rng(seed);
    std::vector<std::uint8_t> levels(n_frames);
    for (std::size_t first = 0; first < n_frames; first += static_cast<std::size_t>(gos_len)) {
        const int k = choices[rng.below(choices.size())];
        for (std::size_t t = first; t < std::min(n_frames, first + static_cast<std::size_t>(gos_len)); ++t) {
            levels[t] = static_cast<std::uint8_t>(k);
        }
    }
    return levels;
}

// Streaming ------------------------------------------------------------------

struct StreamEmission {
    std::uint32_t batch = 0;
    std::vector<WirePacket> packets;
    std::uint32_t frames_buffered = 0;  // frames the sender had seen when emitting
};

/// Incremental sender. Frames arrive one by one (tokens at their level); a
/// batch of T_S frames goes out once its T_F lookahead frames are buffered.
class StreamSender {
public:
    StreamSender(const Layout& layout, const ContextModel& model, int n_layers, int vocab)
        : layout_(layout), model_(&model), n_layers_(n_layers), vocab_(vocab) {
        if (layout.mode != SlicingMode::Streaming) throw ConfigError("stream sender needs streaming slicing");
        layout.stream.validate();
        if (layout.gos.gos_len != layout.stream.stride) throw ConfigError("streaming GoS length must equal T_S");
    }

    QueryObserver observer;

    std::vector<StreamEmission> push(std::span<const std::uint16_t> frame_tokens, int level) {
        if (flushed_) throw ConfigError("stream already flushed");
        if (static_cast<int>(frame_tokens.size()) < level) throw ShapeError("frame has fewer tokens than its level");
        rows_.emplace_back(frame_tokens.begin(), frame_tokens.begin() + level);
        levels_.push_back(static_cast<std::uint8_t>(level));
        return drain(false);
    }

    std::vector<StreamEmission> flush() {
        flushed_ = true;
        return drain(true);
    }

    // Frame t was emitted once `emitted_at[t]` frames had been buffered.
    const std::vector<std::uint32_t>& emitted_at() const { return emitted_at_; }
    const SenderReport& report() const { return report_; }

private:
    std::vector<StreamEmission> drain(bool final) {
        std::vector<StreamEmission> out;
        const std::size_t n = rows_.size();
        const std::size_t ts = static_cast<std::size_t>(layout_.stream.stride);
        const std::size_t tf = static_cast<std::size_t>(layout_.stream.lookahead);
        while (next_batch_ * ts < n && (final || n >= (next_batch_ + 1) * ts + tf)) {
            out.push_back(emit_batch());
            ++next_batch_;
        }
        return out;
    }

    StreamEmission emit_batch() {
        const std::size_t n = rows_.size();
        TokenGrid grid(n, n_layers_, vocab_, 0);
        for (std::size_t t = 0; t < n; ++t) {
            grid.set_level(t, levels_[t]);
            for (int k = 0; k < levels_[t]; ++k) grid.at(t, k) = rows_[t][static_cast<std::size_t>(k)];
        }
        const SliceGrid sg = build_slice_grid(n, levels_, layout_.gos, layout_.mode);
        const DependencyMatrix dm = build_coding_dependency(sg, &layout_.stream);
        std::vector<char> sent(sg.slices.size(), 0);
        for (std::size_t i = 0; i < sg.slices.size(); ++i) sent[i] = sent_ids_.count(sg.slices[i].id) ? 1 : 0;
        std::vector<std::uint32_t> order;
        emit_gos(sg, dm, next_batch_, sent, order);

        StreamEmission em;
        em.batch = next_batch_;
        em.frames_buffered = static_cast<std::uint32_t>(n);
        std::vector<double> layer_bits(static_cast<std::size_t>(n_layers_), 0.0);
        for (auto i : order) {
            const Slice& s = sg.slices[i];
            std::optional<CodedSlice> coded;
            std::optional<std::uint32_t> fec_src;
            if (!s.coarse()) {
                coded = detail::encode_slice(sg, dm, i, grid, *model_, observer, layer_bits,
                                             report_.untrained_fallback);
            } else if (layout_.fec.enabled && prev_coarse_) {
                fec_src = static_cast<std::uint32_t>(*sg.find(*prev_coarse_));
            }
            auto p = make_packet(sg, i, grid, coded, fec_src);
            em.packets.push_back(serialize_packet(p));
            detail::account_packet(report_, sg, i, em.packets.back());
            if (s.coarse()) prev_coarse_ = s.id;
            sent_ids_.insert(s.id);
        }
        const std::size_t b0 = static_cast<std::size_t>(next_batch_) * static_cast<std::size_t>(layout_.stream.stride);
        for (std::size_t t = b0; t < std::min(n, b0 + static_cast<std::size_t>(layout_.stream.stride)); ++t) {
            if (emitted_at_.size() <= t) emitted_at_.resize(t + 1, 0);
            emitted_at_[t] = static_cast<std::uint32_t>(n);
        }
        return em;
    }

    Layout layout_;
    const ContextModel* model_;
    int n_layers_;
    int vocab_;
    std::vector<std::vector<std::uint16_t>> rows_;
    std::vector<std::uint8_t> levels_;
    std::set<SliceId> sent_ids_;
    std::optional<SliceId> prev_coarse_;
    std::uint32_t next_batch_ = 0;
    bool flushed_ = false;
    std::vector<std::uint32_t> emitted_at_;
    SenderReport report_;
};

struct StreamRelease {
    std::uint32_t first_frame = 0;
    std::uint32_t n_frames = 0;
};

/// Incremental receiver for a session of known frame count and levels. Each
/// step takes one batch's packets, decodes what its conditions allow,
/// conceals the batch inside a T_C-frame window ending at the lookahead
/// horizon, and releases the batch. Released frames are final.
class StreamReceiver {
public:
    StreamReceiver(const Layout& layout, const ContextModel& model, std::vector<std::uint8_t> levels)
        : layout_(layout),
          core_(build_slice_grid(levels.size(), levels, layout.gos, layout.mode),
                build_coding_dependency(build_slice_grid(levels.size(), levels, layout.gos, layout.mode),
                                        &layout.stream),
                levels, model.vocab(), model, layout.conceal),
          levels_(std::move(levels)),
          sent_(core_.grid().slices.size(), 0),
          protector_of_(core_.grid().slices.size()) {
        if (layout.mode != SlicingMode::Streaming) throw ConfigError("stream receiver needs streaming slicing");
        std::vector<char> sent(core_.grid().slices.size(), 0);
        std::vector<std::uint32_t> order;
        for (std::uint32_t g = 0; g < core_.grid().gos_spans.size(); ++g) {
            const auto before = order.size();
            emit_gos(core_.grid(), core_.dependency(), g, sent, order);
            batches_.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(before), order.end());
        }
        std::optional<std::uint32_t> prev;
        for (auto i : order) {
            if (!core_.grid().slices[i].coarse()) continue;
            if (prev) protector_of_[*prev] = i;
            prev = i;
        }
        fec_copy_.resize(core_.grid().slices.size());
    }

    std::uint32_t batches() const { return static_cast<std::uint32_t>(batches_.size()); }
    bool done() const { return next_ >= batches_.size(); }

    StreamRelease step(std::span<const WirePacket> packets, const ChannelTrace& trace) {
        if (done()) throw ConfigError("all batches already released");
        if (packets.size() != trace.size()) throw ShapeError("trace length must equal packet count");
        const SliceGrid& sg = core_.grid();
        const auto& expected = batches_[next_];
        const int bits = bits_for_vocab(core_.tokens().vocab());

        std::map<std::uint32_t, Packet> got;
        for (std::size_t p = 0; p < packets.size(); ++p) {
            if (trace[p]) continue;
            auto pk = parse_packet(packets[p]);
            if (!pk) continue;
            auto idx = sg.find(pk->id());
            if (!idx || std::find(expected.begin(), expected.end(), *idx) == expected.end()) continue;
            got.emplace(static_cast<std::uint32_t>(*idx), std::move(*pk));
        }
        for (auto i : expected) {
            const Slice& s = sg.slices[i];
            auto it = got.find(i);
            if (s.coarse()) {
                bool ok = it != got.end() && unpack_tokens(it->second.payload, s.cells, bits, core_.tokens());
                core_.set_coarse(i, ok);
            } else {
                std::optional<CodedSlice> coded;
                if (it != got.end()) coded = CodedSlice{it->second.payload, static_cast<std::uint32_t>(s.cells.size())};
                core_.set_fine(i, std::move(coded));
            }
            sent_[i] = 1;
            // A FEC copy in this packet protects an earlier coarse slice.
            if (s.coarse() && it != got.end() && !it->second.fec.empty()) fec_copy_[i] = it->second.fec;
        }
        // Late FEC recovery of any coarse slice whose protector has arrived;
        // frames already released stay as they were.
        const std::uint32_t unreleased = sg.gos_spans[next_].first;
        for (std::uint32_t i = 0; i < sg.slices.size(); ++i) {
            if (!sent_[i] || !sg.slices[i].coarse() || core_.coarse_ok(i) || !protector_of_[i]) continue;
            if (sg.slices[i].frames.front() < unreleased) continue;
            const auto& copy = fec_copy_[*protector_of_[i]];
            if (!layout_.fec.enabled || copy.empty()) continue;
            if (unpack_tokens(copy, sg.slices[i].cells, bits, core_.tokens())) {
                core_.set_coarse(i, true);
                ++core_.report().fec_recoveries;
            }
        }
        for (auto i : expected) {
            if (!sg.slices[i].coarse()) core_.decode(i);
        }

        const GosSpan span = sg.gos_spans[next_];
        core_.propagate(span.first, span.first + span.len);
        const auto T = static_cast<std::uint32_t>(sg.n_frames);
        const std::uint32_t horizon =
            std::min<std::uint32_t>(T, span.first + span.len + static_cast<std::uint32_t>(layout_.stream.lookahead));
        const auto tc = static_cast<std::uint32_t>(layout_.stream.conceal_ctx);
        ConcealmentWindow w;
        w.core_lo = span.first;
        w.core_hi = span.first + span.len;
        w.hi = horizon;
        w.lo = horizon > tc ? horizon - tc : 0;
        w.lo = std::min(w.lo, w.core_lo);
        w.hi = std::max(w.hi, w.core_hi);
        core_.report().lost_cells_before_conceal += count_lost(span);
        core_.conceal(w);
        ++next_;
        if (done()) core_.finalize_report();
        return {span.first, span.len};
    }

    ReceivedTokens result() {
        core_.finalize_report();
        return {core_.tokens(), core_.states(), core_.report()};
    }

    void set_observer(ConcealObserver obs) { core_.observer = std::move(obs); }

private:
    std::size_t count_lost(const GosSpan& span) {
        std::size_t n = 0;
        for (std::uint32_t t = span.first; t < span.first + span.len; ++t) {
            for (int k = 0; k < levels_[t]; ++k) n += core_.states().at(t, k) == TokenState::L;
        }
        return n;
    }

    Layout layout_;
    ReceiverCore core_;
    std::vector<std::uint8_t> levels_;
    std::vector<char> sent_;
    std::vector<std::optional<std::uint32_t>> protector_of_;
    std::vector<std::vector<std::uint8_t>> fec_copy_;
    std::vector<std::vector<std::uint32_t>> batches_;
    std::size_t next_ = 0;
};

}  // namespace soundspring

#endif  // SOUNDSPRING_PIPELINE_HPP
