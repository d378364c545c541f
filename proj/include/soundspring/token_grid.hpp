#ifndef SOUNDSPRING_TOKEN_GRID_HPP
#define SOUNDSPRING_TOKEN_GRID_HPP

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace soundspring {

// Layers are 0-based throughout: layer k here is layer k+1 in RVQ order.
// A frame's level is the number of encoded layers.

/// Frames x layers token matrix plus the per-frame encoded level.
class TokenGrid {
public:
    TokenGrid() = default;
    TokenGrid(std::size_t frames, int n_layers, int vocab, int level)
        : n_layers_(n_layers),
          vocab_(vocab),
          level_(frames, static_cast<std::uint8_t>(level)),
          tokens_(frames * static_cast<std::size_t>(n_layers), 0) {
        if (n_layers <= 0 || n_layers > 255) throw ConfigError("layer count must be in [1, 255]");
        if (vocab < 2 || vocab > 65535) throw ConfigError("vocab must be in [2, 65535]");
        if (level < 0 || level > n_layers) throw LevelError("level out of range");
    }

    std::size_t frames() const { return level_.size(); }
    int n_layers() const { return n_layers_; }
    int vocab() const { return vocab_; }

    int level(std::size_t t) const { return level_[t]; }
    void set_level(std::size_t t, int k) {
        if (k < 0 || k > n_layers_) throw LevelError("level out of range");
        level_[t] = static_cast<std::uint8_t>(k);
    }
    const std::vector<std::uint8_t>& levels() const { return level_; }

    std::uint16_t at(std::size_t t, int k) const { return tokens_[t * n_layers_ + k]; }
    std::uint16_t& at(std::size_t t, int k) { return tokens_[t * n_layers_ + k]; }

    const std::vector<std::uint16_t>& tokens() const { return tokens_; }

    // Equality over encoded cells only; tokens above a frame's level are ignored.
    friend bool operator==(const TokenGrid& a, const TokenGrid& b) {
        if (a.frames() != b.frames() || a.n_layers_ != b.n_layers_ || a.vocab_ != b.vocab_ || a.level_ != b.level_) {
            return false;
        }
        for (std::size_t t = 0; t < a.frames(); ++t) {
            for (int k = 0; k < a.level(t); ++k) {
                if (a.at(t, k) != b.at(t, k)) return false;
            }
        }
        return true;
    }

private:
    int n_layers_ = 0;
    int vocab_ = 0;
    std::vector<std::uint8_t> level_;
    std::vector<std::uint16_t> tokens_;
};

enum class TokenState : std::uint8_t { R, L, I, C };

inline char state_char(TokenState s) {
    switch (s) {
        case TokenState::R: return 'R';
        case TokenState::L: return 'L';
        case TokenState::I: return 'I';
        case TokenState::C: return 'C';
    }
    return '?';
}

class TokenStateGrid {
public:
    TokenStateGrid() = default;
    TokenStateGrid(std::size_t frames, int n_layers, TokenState fill = TokenState::I)
        : frames_(frames), n_layers_(n_layers), state_(frames * static_cast<std::size_t>(n_layers), fill) {}

    std::size_t frames() const { return frames_; }
    int n_layers() const { return n_layers_; }

    TokenState at(std::size_t t, int k) const { return state_[t * n_layers_ + k]; }
    TokenState& at(std::size_t t, int k) { return state_[t * n_layers_ + k]; }

    // Longest prefix of layers whose states are all R or C.
    int valid_depth(std::size_t t) const {
        int d = 0;
        while (d < n_layers_ && (at(t, d) == TokenState::R || at(t, d) == TokenState::C)) ++d;
        return d;
    }

    std::string row_string(std::size_t t) const {
        std::string s;
        for (int k = 0; k < n_layers_; ++k) s += state_char(at(t, k));
        return s;
    }

private:
    std::size_t frames_ = 0;
    int n_layers_ = 0;
    std::vector<TokenState> state_;
};

struct GosConfig {
    int gos_len = 150;
    int n_units = 10;
    // N_0..N_{J+1}: group j holds layers [bounds[j], bounds[j+1]).
    std::vector<int> fine_bounds;
    int key_unit = 0;  // 0-based unit index of the key slices

    int n_coarse() const { return fine_bounds.size() >= 2 ? fine_bounds[1] : 0; }
    int n_layers() const { return fine_bounds.empty() ? 0 : fine_bounds.back(); }
    int n_groups() const { return static_cast<int>(fine_bounds.size()) - 1; }

    void validate() const {
        if (gos_len < 1) throw ConfigError("gos_len must be >= 1");
        if (n_units < 1 || n_units > gos_len) throw ConfigError("n_units must lie in [1, gos_len]");
        if (n_units > 256) throw ConfigError("n_units must fit in one byte");
        if (fine_bounds.size() < 2 || fine_bounds.front() != 0) throw ConfigError("fine_bounds must start at 0");
        for (std::size_t i = 1; i < fine_bounds.size(); ++i) {
            if (fine_bounds[i] <= fine_bounds[i - 1]) throw ConfigError("fine_bounds must be strictly increasing");
        }
        if (n_groups() > 256) throw ConfigError("too many layer groups");
        if (key_unit < 0 || key_unit >= n_units) throw ConfigError("key_unit out of range");
    }
};

// Splits the fine layers (n_coarse, n_layers] into `groups` contiguous groups
// of as-equal-as-possible size, larger groups first.
inline std::vector<int> default_fine_bounds(int n_layers, int n_coarse, int groups) {
    if (n_coarse < 1 || n_coarse > n_layers) throw ConfigError("n_coarse must lie in [1, n_layers]");
    const int fine = n_layers - n_coarse;
    groups = std::clamp(groups, fine == 0 ? 0 : 1, fine);
    std::vector<int> bounds{0, n_coarse};
    int at = n_coarse;
    for (int g = 0; g < groups; ++g) {
        at += fine / groups + (g < fine % groups ? 1 : 0);
        bounds.push_back(at);
    }
    return bounds;
}

struct StreamConfig {
    int stride = 3;       // T_S
    int coding_ctx = 9;   // T_G
    int conceal_ctx = 9;  // T_C
    int lookahead = 3;    // T_F

    void validate() const {
        if (stride < 1) throw ConfigError("stride must be >= 1");
        if (lookahead < 0) throw ConfigError("lookahead must be >= 0");
        if (coding_ctx < stride || conceal_ctx < stride) throw ConfigError("context lengths must be >= stride");
        if (stride > 256) throw ConfigError("stride must fit in one byte");
    }
};

/// Frame offsets (0-based, within one GoS of `gos_len` frames) of each of the
/// `n_units` periodic slicing groups: unit l holds offsets l, l+S, l+2S, ...
inline std::vector<std::vector<int>> periodic_slicing(int gos_len, int n_units) {
    if (n_units < 1 || gos_len < 0 || (gos_len > 0 && n_units > gos_len)) {
        throw ConfigError("periodic slicing needs 1 <= S <= T_G");
    }
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(n_units));
    for (int t = 0; t < gos_len; ++t) groups[static_cast<std::size_t>(t % n_units)].push_back(t);
    return groups;
}

/// One singleton group per frame.
inline std::vector<std::vector<int>> streaming_slicing(int n_frames) {
    std::vector<std::vector<int>> groups;
    groups.reserve(static_cast<std::size_t>(n_frames));
    for (int t = 0; t < n_frames; ++t) groups.push_back({t});
    return groups;
}

enum class SlicingMode { Periodic, Streaming };

struct SliceId {
    std::uint32_t gos = 0;
    std::uint16_t unit = 0;
    std::uint16_t group = 0;

    auto operator<=>(const SliceId&) const = default;
};

inline std::string to_string(const SliceId& id) {
    return "S[" + std::to_string(id.gos) + "," + std::to_string(id.unit + 1) + "," + std::to_string(id.group) + "]";
}

struct Cell {
    std::uint32_t t = 0;
    std::uint16_t k = 0;

    auto operator<=>(const Cell&) const = default;
};

struct Slice {
    SliceId id;
    bool key = false;
    std::vector<std::uint32_t> frames;  // sorted, global frame indices
    std::vector<Cell> cells;            // frame-major, then layer

    bool coarse() const { return id.group == 0; }
};

struct GosSpan {
    std::uint32_t first = 0;
    std::uint32_t len = 0;
};

class SliceGrid {
public:
    std::size_t n_frames = 0;
    int n_layers = 0;
    int n_coarse = 0;
    SlicingMode mode = SlicingMode::Periodic;
    GosConfig gos;
    std::vector<GosSpan> gos_spans;
    std::vector<Slice> slices;
    std::vector<std::int32_t> cell_slice;  // frames x layers, -1 if not encoded

    std::int32_t slice_of(std::size_t t, int k) const { return cell_slice[t * n_layers + k]; }

    std::optional<std::size_t> find(const SliceId& id) const {
        auto it = std::lower_bound(slices.begin(), slices.end(), id,
                                   [](const Slice& s, const SliceId& v) { return s.id < v; });
        if (it == slices.end() || it->id != id) return std::nullopt;
        return static_cast<std::size_t>(it - slices.begin());
    }

    std::uint32_t gos_of(std::size_t t) const {
        return static_cast<std::uint32_t>(t / static_cast<std::size_t>(gos.gos_len));
    }
};

/// Builds the slice grid over frames with the given per-frame levels. Slices
/// are ordered by (gos, unit, group); empty slices are omitted.
inline SliceGrid build_slice_grid(std::size_t n_frames, const std::vector<std::uint8_t>& levels, const GosConfig& gos,
                                  SlicingMode mode) {
    gos.validate();
    if (levels.size() != n_frames) throw ShapeError("one level per frame required");
    const int n_layers = gos.n_layers();
    const int n_coarse = gos.n_coarse();
    if (mode == SlicingMode::Streaming && gos.gos_len > 256) throw ConfigError("streaming GoS must fit 256 units");
    for (auto lv : levels) {
        if (lv < n_coarse) throw LevelError("level below the coarse layer count");
        if (lv > n_layers) throw LevelError("level above the layer count");
    }

    SliceGrid sg;
    sg.n_frames = n_frames;
    sg.n_layers = n_layers;
    sg.n_coarse = n_coarse;
    sg.mode = mode;
    sg.gos = gos;
    sg.cell_slice.assign(n_frames * static_cast<std::size_t>(n_layers), -1);

    const std::size_t gos_len = static_cast<std::size_t>(gos.gos_len);
    for (std::size_t first = 0; first < n_frames; first += gos_len) {
        const auto len = static_cast<int>(std::min(gos_len, n_frames - first));
        const auto g = static_cast<std::uint32_t>(sg.gos_spans.size());
        sg.gos_spans.push_back({static_cast<std::uint32_t>(first), static_cast<std::uint32_t>(len)});

        std::vector<std::vector<int>> units;
        if (mode == SlicingMode::Periodic) {
            units = periodic_slicing(gos.gos_len, gos.n_units);
            for (auto& u : units) std::erase_if(u, [&](int off) { return off >= len; });
        } else {
            units = streaming_slicing(len);
        }
        const int key_unit = mode == SlicingMode::Periodic ? gos.key_unit : 0;

        for (std::size_t l = 0; l < units.size(); ++l) {
            for (int j = 0; j < gos.n_groups(); ++j) {
                Slice s;
                s.id = {g, static_cast<std::uint16_t>(l), static_cast<std::uint16_t>(j)};
                s.key = j > 0 && static_cast<int>(l) == key_unit;
                for (int off : units[l]) {
                    const std::size_t t = first + static_cast<std::size_t>(off);
                    const int hi = std::min<int>(gos.fine_bounds[j + 1], levels[t]);
                    bool any = false;
                    for (int k = gos.fine_bounds[j]; k < hi; ++k) {
                        s.cells.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint16_t>(k)});
                        any = true;
                    }
                    if (any) s.frames.push_back(static_cast<std::uint32_t>(t));
                }
                if (s.cells.empty()) continue;
                const auto idx = static_cast<std::int32_t>(sg.slices.size());
                for (const Cell& c : s.cells) sg.cell_slice[c.t * n_layers + c.k] = idx;
                sg.slices.push_back(std::move(s));
            }
        }
    }
    return sg;
}

inline SliceGrid build_slice_grid(std::size_t n_frames, int level, const GosConfig& gos, SlicingMode mode) {
    if (level < 0 || level > 255) throw LevelError("level out of range");
    return build_slice_grid(n_frames, std::vector<std::uint8_t>(n_frames, static_cast<std::uint8_t>(level)), gos,
                            mode);
}

struct PartitionViolation {
    enum class Kind { Totality, Disjointness, Purity, LayerRange, Index } kind;
    Cell cell;
    std::string message;
};

/// Checks that the slices partition exactly the encoded cells, that no slice
/// mixes coarse and fine layers, and that every cell sits in its group's
/// layer range. Returns the first violation found.
inline std::optional<PartitionViolation> validate_partition(const SliceGrid& sg,
                                                            const std::vector<std::uint8_t>& levels) {
    using Kind = PartitionViolation::Kind;
    const auto n_layers = sg.n_layers;
    auto describe = [](const Cell& c) {
        return "(t=" + std::to_string(c.t) + ", k=" + std::to_string(c.k + 1) + ")";
    };
    if (levels.size() != sg.n_frames || sg.cell_slice.size() != sg.n_frames * static_cast<std::size_t>(n_layers)) {
        return PartitionViolation{Kind::Index, {}, "shape mismatch"};
    }
    std::vector<int> seen(sg.cell_slice.size(), 0);
    for (std::size_t i = 0; i < sg.slices.size(); ++i) {
        const Slice& s = sg.slices[i];
        const int lo = sg.gos.fine_bounds[s.id.group];
        const int hi = sg.gos.fine_bounds[s.id.group + 1];
        for (const Cell& c : s.cells) {
            if (c.t >= sg.n_frames || c.k >= n_layers) {
                return PartitionViolation{Kind::Index, c, "cell outside the grid " + describe(c)};
            }
            const std::size_t pos = c.t * static_cast<std::size_t>(n_layers) + c.k;
            if (++seen[pos] > 1) {
                return PartitionViolation{Kind::Disjointness, c, "cell in more than one slice " + describe(c)};
            }
            if (c.k >= levels[c.t]) {
                return PartitionViolation{Kind::Totality, c, "cell above the encoded level " + describe(c)};
            }
            const bool coarse_cell = c.k < sg.n_coarse;
            if (coarse_cell != s.coarse()) {
                return PartitionViolation{Kind::Purity, c, "slice mixes coarse and fine layers " + describe(c)};
            }
            if (c.k < lo || c.k >= hi) {
                return PartitionViolation{Kind::LayerRange, c, "cell outside its group's layers " + describe(c)};
            }
            if (sg.cell_slice[pos] != static_cast<std::int32_t>(i)) {
                return PartitionViolation{Kind::Index, c, "assignment disagrees with slice contents " + describe(c)};
            }
        }
    }
    for (std::size_t t = 0; t < sg.n_frames; ++t) {
        for (int k = 0; k < n_layers; ++k) {
            const std::size_t pos = t * static_cast<std::size_t>(n_layers) + k;
            const bool encoded = k < levels[t];
            const Cell c{static_cast<std::uint32_t>(t), static_cast<std::uint16_t>(k)};
            if (encoded && seen[pos] == 0) {
                return PartitionViolation{Kind::Totality, c, "encoded cell in no slice " + describe(c)};
            }
            if (!encoded && sg.cell_slice[pos] != -1) {
                return PartitionViolation{Kind::Totality, c, "unencoded cell assigned " + describe(c)};
            }
        }
    }
    return std::nullopt;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_TOKEN_GRID_HPP
