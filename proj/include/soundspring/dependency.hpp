#ifndef SOUNDSPRING_DEPENDENCY_HPP
#define SOUNDSPRING_DEPENDENCY_HPP

#include <algorithm>
#include <cstdint>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "token_grid.hpp"

namespace soundspring {

/// Slice-level coding dependency: conditions[i] lists the slices (indices
/// into SliceGrid::slices, ascending) that slice i is conditioned on.
struct DependencyMatrix {
    std::vector<std::vector<std::uint32_t>> conditions;

    std::size_t size() const { return conditions.size(); }
};

namespace detail {

inline std::vector<std::uint32_t> coarse_slices_in_frames(const SliceGrid& sg, std::size_t lo, std::size_t hi) {
    std::vector<std::uint32_t> out;
    for (std::size_t t = lo; t < hi; ++t) {
        for (int k = 0; k < sg.n_coarse; ++k) {
            const auto s = sg.slice_of(t, k);
            if (s >= 0) out.push_back(static_cast<std::uint32_t>(s));
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace detail

/// Coarse slices are unconditioned. A key fine slice is conditioned on the
/// coarse slices of its GoS; a non-key fine slice S(l, j) additionally on the
/// key slices S(l*, 1..j). In streaming mode (`stream` given) the coarse
/// conditions of a frame t in batch [b0, b0 + T_S) are the coarse slices of
/// frames [h + 1 - T_G, t + T_F], where h = b0 + T_S - 1 + T_F is the batch's
/// lookahead horizon.
inline DependencyMatrix build_coding_dependency(const SliceGrid& sg, const StreamConfig* stream = nullptr) {
    if (sg.mode == SlicingMode::Streaming && stream) stream->validate();
    DependencyMatrix dm;
    dm.conditions.resize(sg.slices.size());
    for (std::size_t i = 0; i < sg.slices.size(); ++i) {
        const Slice& s = sg.slices[i];
        if (s.coarse()) continue;
        const GosSpan span = sg.gos_spans[s.id.gos];
        std::vector<std::uint32_t> cond;
        if (sg.mode == SlicingMode::Streaming && stream) {
            const std::size_t T = sg.n_frames;
            const std::size_t t = s.frames.front();
            const std::size_t horizon = std::min<std::size_t>(T - 1, span.first + span.len - 1 + stream->lookahead);
            const std::size_t lo = horizon + 1 >= static_cast<std::size_t>(stream->coding_ctx)
                                       ? horizon + 1 - static_cast<std::size_t>(stream->coding_ctx)
                                       : 0;
            const std::size_t hi = std::min<std::size_t>(T, t + stream->lookahead + 1);
            cond = detail::coarse_slices_in_frames(sg, std::min<std::size_t>(lo, span.first), hi);
        } else {
            cond = detail::coarse_slices_in_frames(sg, span.first, span.first + span.len);
        }
        if (!s.key) {
            const int key_unit = sg.mode == SlicingMode::Periodic ? sg.gos.key_unit : 0;
            for (std::uint16_t j = 1; j <= s.id.group; ++j) {
                if (auto idx = sg.find({s.id.gos, static_cast<std::uint16_t>(key_unit), j})) {
                    cond.push_back(static_cast<std::uint32_t>(*idx));
                }
            }
        }
        std::sort(cond.begin(), cond.end());
        dm.conditions[i] = std::move(cond);
    }
    return dm;
}

/// Kahn's algorithm, smallest ready index first. Empty when Phi has a cycle.
inline std::optional<std::vector<std::uint32_t>> topological_order(const DependencyMatrix& dm) {
    const std::size_t n = dm.size();
    std::vector<std::vector<std::uint32_t>> dependents(n);
    std::vector<std::uint32_t> pending(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto c : dm.conditions[i]) {
            if (c >= n || c == i) return std::nullopt;
            dependents[c].push_back(static_cast<std::uint32_t>(i));
            ++pending[i];
        }
    }
    std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < n; ++i) {
        if (pending[i] == 0) ready.push(static_cast<std::uint32_t>(i));
    }
    std::vector<std::uint32_t> order;
    while (!ready.empty()) {
        const auto i = ready.top();
        ready.pop();
        order.push_back(i);
        for (auto d : dependents[i]) {
            if (--pending[d] == 0) ready.push(d);
        }
    }
    if (order.size() != n) return std::nullopt;
    return order;
}

/// Appends the wire order of GoS `g`: first every coarse slice the GoS needs
/// that has not gone out yet (ascending), then its key fine slices by group,
/// then its non-key fine slices by (unit, group). `sent` is indexed by slice.
inline void emit_gos(const SliceGrid& sg, const DependencyMatrix& dm, std::uint32_t g, std::vector<char>& sent,
                     std::vector<std::uint32_t>& out) {
    auto first = std::lower_bound(sg.slices.begin(), sg.slices.end(), SliceId{g, 0, 0},
                                  [](const Slice& s, const SliceId& v) { return s.id < v; });
    const auto lo = static_cast<std::uint32_t>(first - sg.slices.begin());
    auto hi = lo;
    while (hi < sg.slices.size() && sg.slices[hi].id.gos == g) ++hi;

    std::vector<std::uint32_t> coarse;
    for (auto i = lo; i < hi; ++i) {
        if (sg.slices[i].coarse()) coarse.push_back(i);
        for (auto c : dm.conditions[i]) {
            if (sg.slices[c].coarse()) coarse.push_back(c);
        }
    }
    std::sort(coarse.begin(), coarse.end());
    for (auto c : coarse) {
        if (!sent[c]) {
            sent[c] = 1;
            out.push_back(c);
        }
    }
    std::vector<std::uint32_t> key, rest;
    for (auto i = lo; i < hi; ++i) {
        if (sg.slices[i].coarse() || sent[i]) continue;
        (sg.slices[i].key ? key : rest).push_back(i);
    }
    std::stable_sort(key.begin(), key.end(),
                     [&](auto a, auto b) { return sg.slices[a].id.group < sg.slices[b].id.group; });
    for (auto v : {&key, &rest}) {
        for (auto i : *v) {
            sent[i] = 1;
            out.push_back(i);
        }
    }
}

/// Wire order of the whole grid; a topological order of Phi.
inline std::vector<std::uint32_t> emission_order(const SliceGrid& sg, const DependencyMatrix& dm) {
    std::vector<std::uint32_t> order;
    order.reserve(sg.slices.size());
    std::vector<char> sent(sg.slices.size(), 0);
    for (std::uint32_t g = 0; g < sg.gos_spans.size(); ++g) emit_gos(sg, dm, g, sent, order);
    return order;
}

/// One "target <- cond,cond,..." line per slice.
inline std::string export_adjacency(const SliceGrid& sg, const DependencyMatrix& dm) {
    std::ostringstream os;
    for (std::size_t i = 0; i < dm.size(); ++i) {
        os << to_string(sg.slices[i].id) << " <-";
        for (std::size_t c = 0; c < dm.conditions[i].size(); ++c) {
            os << (c == 0 ? " " : ",") << to_string(sg.slices[dm.conditions[i][c]].id);
        }
        os << '\n';
    }
    return os.str();
}

enum class LossCase { Case1 = 1, Case2 = 2, Case3 = 3, Case4 = 4 };

/// Frames [lo, hi) form the context of the window; targets are taken only
/// from the core frames [core_lo, core_hi).
struct ConcealmentWindow {
    std::uint32_t lo = 0;
    std::uint32_t hi = 0;
    std::uint32_t core_lo = 0;
    std::uint32_t core_hi = 0;

    std::uint32_t length() const { return hi - lo; }
};

struct ConcealTarget {
    Cell cell;
    LossCase loss_case;
};

struct ConcealConfig {
    int window = 9;              // T_C
    int conceal_fine_layers = 2; // targets per frame in cases 2 and 4
};

/// A frame is damaged when any of its encoded cells is not R. Maximal runs of
/// damaged frames are cut into cores of at most max(1, T_C - 2) frames, and
/// each core is padded symmetrically with neighboring frames up to T_C.
inline std::vector<ConcealmentWindow> build_conceal_windows(const TokenStateGrid& states,
                                                            const std::vector<std::uint8_t>& levels, int window,
                                                            std::uint32_t lo = 0,
                                                            std::optional<std::uint32_t> hi_opt = std::nullopt) {
    if (window < 1) throw WindowError("concealment window must hold at least one frame");
    const std::uint32_t hi = hi_opt ? *hi_opt : static_cast<std::uint32_t>(states.frames());
    auto damaged = [&](std::uint32_t t) {
        for (int k = 0; k < levels[t]; ++k) {
            if (states.at(t, k) != TokenState::R) return true;
        }
        return false;
    };
    const std::uint32_t core_max = static_cast<std::uint32_t>(std::max(1, window - 2));
    std::vector<ConcealmentWindow> out;
    std::uint32_t t = lo;
    while (t < hi) {
        if (!damaged(t)) {
            ++t;
            continue;
        }
        std::uint32_t end = t;
        while (end < hi && damaged(end) && end - t < core_max) ++end;
        ConcealmentWindow w{t, end, t, end};
        std::uint32_t spare = static_cast<std::uint32_t>(window) - (end - t);
        std::uint32_t left = spare / 2 + spare % 2;
        std::uint32_t right = spare / 2;
        // Give unused padding on a clipped side to the other side.
        const std::uint32_t room_left = t - lo;
        const std::uint32_t room_right = hi - end;
        if (left > room_left) {
            right += left - room_left;
            left = room_left;
        }
        if (right > room_right) {
            left = std::min(room_left, left + (right - room_right));
            right = room_right;
        }
        w.lo = t - left;
        w.hi = end + right;
        out.push_back(w);
        t = end;
    }
    return out;
}

namespace detail {

inline bool slice_recovered(const SliceGrid& sg, const TokenStateGrid& states, std::uint32_t s) {
    for (const Cell& c : sg.slices[s].cells) {
        if (states.at(c.t, c.k) != TokenState::R) return false;
    }
    return true;
}

}  // namespace detail

/// Assigns concealment targets and their loss case inside one window.
inline std::vector<ConcealTarget> classify_loss(const TokenStateGrid& states, const ConcealmentWindow& window,
                                                const SliceGrid& sg, const DependencyMatrix& dm,
                                                const std::vector<std::uint8_t>& levels, const ConcealConfig& cfg) {
    if (window.length() > static_cast<std::uint32_t>(cfg.window)) throw WindowError("window longer than T_C");
    if (window.length() == 0 || window.core_lo < window.lo || window.core_hi > window.hi) {
        throw WindowError("malformed concealment window");
    }
    std::vector<ConcealTarget> out;
    const int nc = sg.n_coarse;
    for (std::uint32_t t = window.core_lo; t < window.core_hi; ++t) {
        const int level = levels[t];
        bool coarse_ok = true;
        for (int k = 0; k < nc; ++k) {
            if (states.at(t, k) == TokenState::L) out.push_back({{t, static_cast<std::uint16_t>(k)}, LossCase::Case1});
            if (states.at(t, k) != TokenState::R) coarse_ok = false;
        }
        if (!coarse_ok) continue;

        int k0 = nc;
        while (k0 < level && states.at(t, k0) == TokenState::R) ++k0;
        if (k0 >= level) continue;

        if (states.at(t, k0) == TokenState::L) {
            out.push_back({{t, static_cast<std::uint16_t>(k0)}, LossCase::Case3});
            continue;
        }
        // Invalid: either a coarse condition (Case 2) or a key slice (Case 4)
        // was not recovered.
        LossCase lc = LossCase::Case4;
        const auto s = sg.slice_of(t, k0);
        if (s >= 0) {
            for (auto c : dm.conditions[static_cast<std::size_t>(s)]) {
                if (sg.slices[c].coarse() && !detail::slice_recovered(sg, states, c)) {
                    lc = LossCase::Case2;
                    break;
                }
            }
        }
        const int top = std::min(level, k0 + cfg.conceal_fine_layers);
        for (int k = k0; k < top; ++k) out.push_back({{t, static_cast<std::uint16_t>(k)}, lc});
    }
    return out;
}

struct ConcealMask {
    std::vector<Cell> masked;      // M
    std::vector<Cell> conditions;  // M-bar
};

/// Masked set = targets plus every non-R cell at or below the highest target
/// layer; condition set = R cells of the window at or below that layer inside
/// each frame's usable prefix, never above a same-frame target.
inline ConcealMask build_conceal_mask(const std::vector<ConcealTarget>& targets, const TokenStateGrid& states,
                                      const ConcealmentWindow& window) {
    ConcealMask mask;
    if (targets.empty()) return mask;
    int max_layer = 0;
    std::vector<int> lowest_target(window.hi - window.lo, states.n_layers());
    for (const auto& tg : targets) {
        max_layer = std::max<int>(max_layer, tg.cell.k);
        int& low = lowest_target[tg.cell.t - window.lo];
        low = std::min<int>(low, tg.cell.k);
    }
    std::vector<Cell> target_cells;
    for (const auto& tg : targets) target_cells.push_back(tg.cell);
    std::sort(target_cells.begin(), target_cells.end());

    for (std::uint32_t t = window.lo; t < window.hi; ++t) {
        const int depth = states.valid_depth(t);
        const int ceiling = std::min(max_layer, lowest_target[t - window.lo]);
        for (int k = 0; k <= max_layer && k < states.n_layers(); ++k) {
            const Cell c{t, static_cast<std::uint16_t>(k)};
            const bool is_target = std::binary_search(target_cells.begin(), target_cells.end(), c);
            if (is_target || states.at(t, k) != TokenState::R) {
                mask.masked.push_back(c);
            } else if (k < depth && k <= ceiling && states.at(t, k) == TokenState::R) {
                mask.conditions.push_back(c);
            }
        }
    }
    return mask;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_DEPENDENCY_HPP
