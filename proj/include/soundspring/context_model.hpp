#ifndef SOUNDSPRING_CONTEXT_MODEL_HPP
#define SOUNDSPRING_CONTEXT_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "pmf.hpp"
#include "token_grid.hpp"

namespace soundspring {

/// Cosine masking schedule: 1/2 (1 + cos(tau * pi)).
inline double beta(double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("tau must lie in [0, 1]");
    return 0.5 * (1.0 + std::cos(tau * std::numbers::pi));
}

/// A masked view of a token grid restricted to frames [lo, hi). Only cells
/// flagged visible may be read by a context model; targets are the cells
/// whose distribution is requested.
class MaskedQuery {
public:
    MaskedQuery(const TokenGrid& grid, std::uint32_t lo, std::uint32_t hi)
        : grid_(&grid), lo_(lo), hi_(hi), visible_(static_cast<std::size_t>(hi - lo) * grid.n_layers(), 0) {
        if (lo > hi || hi > grid.frames()) throw ShapeError("query window outside the grid");
    }

    const TokenGrid& grid() const { return *grid_; }
    std::uint32_t lo() const { return lo_; }
    std::uint32_t hi() const { return hi_; }

    bool in_window(std::uint32_t t) const { return t >= lo_ && t < hi_; }

    void reveal(std::uint32_t t, int k) {
        if (!in_window(t)) throw ShapeError("revealed cell outside the query window");
        visible_[index(t, k)] = 1;
    }
    void hide(std::uint32_t t, int k) { visible_[index(t, k)] = 0; }
    bool visible(std::uint32_t t, int k) const { return in_window(t) && visible_[index(t, k)] != 0; }

    void add_target(Cell c) {
        if (!in_window(c.t) || c.k >= grid_->n_layers()) throw ShapeError("target outside the query window");
        targets_.push_back(c);
    }
    const std::vector<Cell>& targets() const { return targets_; }

    // Masked/unmasked sets must not overlap.
    bool consistent() const {
        return std::none_of(targets_.begin(), targets_.end(), [&](const Cell& c) { return visible(c.t, c.k); });
    }

    // Largest and smallest visible frame, if any.
    std::optional<std::pair<std::uint32_t, std::uint32_t>> visible_frame_span() const {
        std::optional<std::pair<std::uint32_t, std::uint32_t>> span;
        for (std::uint32_t t = lo_; t < hi_; ++t) {
            for (int k = 0; k < grid_->n_layers(); ++k) {
                if (!visible(t, k)) continue;
                if (!span) span = std::pair{t, t};
                span->second = t;
                break;
            }
        }
        return span;
    }

private:
    std::size_t index(std::uint32_t t, int k) const {
        return static_cast<std::size_t>(t - lo_) * grid_->n_layers() + static_cast<std::size_t>(k);
    }

    const TokenGrid* grid_;
    std::uint32_t lo_;
    std::uint32_t hi_;
    std::vector<std::uint8_t> visible_;
    std::vector<Cell> targets_;
};

// Context key: target layer, nearest visible same-layer token before and
// after the target frame with its (capped) frame distance, and the visible
// token directly below the target in its own frame. Missing neighbors use
// token = vocab and distance 0.
inline constexpr int kMaxKeyDistance = 4;

struct ContextKey {
    int layer = 0;
    int left = 0;
    int left_dist = 0;
    int below = 0;
    int right = 0;
    int right_dist = 0;

    std::uint64_t pack() const {
        return (static_cast<std::uint64_t>(layer) << 54) | (static_cast<std::uint64_t>(left) << 38) |
               (static_cast<std::uint64_t>(below) << 22) | (static_cast<std::uint64_t>(right) << 6) |
               (static_cast<std::uint64_t>(left_dist) << 3) | static_cast<std::uint64_t>(right_dist);
    }
};

inline int cap_distance(std::uint32_t d) { return static_cast<int>(std::min<std::uint32_t>(d, kMaxKeyDistance)); }

inline ContextKey context_key(const MaskedQuery& q, Cell target) {
    const TokenGrid& g = q.grid();
    const int sentinel = g.vocab();
    ContextKey key{target.k, sentinel, 0, sentinel, sentinel, 0};
    for (std::uint32_t t = target.t; t > q.lo();) {
        --t;
        if (q.visible(t, target.k)) {
            key.left = g.at(t, target.k);
            key.left_dist = cap_distance(target.t - t);
            break;
        }
    }
    if (target.k > 0 && q.visible(target.t, target.k - 1)) key.below = g.at(target.t, target.k - 1);
    for (std::uint32_t t = target.t + 1; t < q.hi(); ++t) {
        if (q.visible(t, target.k)) {
            key.right = g.at(t, target.k);
            key.right_dist = cap_distance(t - target.t);
            break;
        }
    }
    return key;
}

struct PmfResult {
    std::vector<Pmf> pmfs;  // one per target, in target order
    bool untrained_fallback = false;
};

/// Probability engine over masked token grids. The same model answers
/// entropy-coding queries and concealment queries.
class ContextModel {
public:
    virtual ~ContextModel() = default;
    virtual int vocab() const = 0;
    virtual PmfResult pmf(const MaskedQuery& query) const = 0;
};

class UniformModel final : public ContextModel {
public:
    explicit UniformModel(int vocab) : vocab_(vocab), pmf_(uniform_pmf(vocab)) {}

    int vocab() const override { return vocab_; }

    PmfResult pmf(const MaskedQuery& query) const override {
        return {std::vector<Pmf>(query.targets().size(), pmf_), false};
    }

private:
    int vocab_;
    Pmf pmf_;
};

/// Maximum-likelihood token per target (lowest index on ties).
inline std::vector<std::uint16_t> predict(const ContextModel& model, const MaskedQuery& query) {
    auto res = model.pmf(query);
    std::vector<std::uint16_t> out;
    out.reserve(res.pmfs.size());
    for (const Pmf& p : res.pmfs) out.push_back(static_cast<std::uint16_t>(p.argmax()));
    return out;
}

struct TrainSchedule {
    std::function<double(double)> mask_ratio = [](double tau) { return beta(tau); };
    std::optional<double> fixed_tau;
    std::optional<int> fixed_level;  // K
    std::optional<int> fixed_layer;  // 0-based first masked layer
    int n_coarse = 1;
    std::uint64_t samples = 1000;
    std::uint64_t seed = 1;
};

/// Conditional frequency tables keyed by ContextKey, with a per-layer
/// marginal table as fallback for unseen keys and Laplace smoothing
/// alpha = alpha_num / alpha_den.
class CountModel final : public ContextModel {
public:
    CountModel(int vocab, int n_layers) : vocab_(vocab), n_layers_(n_layers) {
        if (vocab < 2 || static_cast<std::uint32_t>(vocab) > kPmfTotal / 2) throw ConfigError("vocab out of range");
        if (n_layers < 1 || n_layers > 255) throw ConfigError("layer count out of range");
        marginal_.assign(static_cast<std::size_t>(vocab) * n_layers, 0);
    }

    int vocab() const override { return vocab_; }
    int n_layers() const { return n_layers_; }
    std::uint64_t observations() const { return observations_; }
    std::size_t n_keys() const { return index_.size(); }

    std::uint32_t alpha_num = 1;
    std::uint32_t alpha_den = 2;

    void observe(const ContextKey& key, std::uint16_t token) {
        const std::uint64_t packed = key.pack();
        auto [it, inserted] = index_.try_emplace(packed, counts_.size());
        if (inserted) counts_.resize(counts_.size() + static_cast<std::size_t>(vocab_), 0);
        ++counts_[it->second + token];
        ++marginal_[static_cast<std::size_t>(key.layer) * vocab_ + token];
        ++observations_;
    }

    // Raw counts for a key, or nullptr when unseen.
    const std::uint32_t* counts(const ContextKey& key) const {
        auto it = index_.find(key.pack());
        return it == index_.end() ? nullptr : counts_.data() + it->second;
    }
    std::span<const std::uint64_t> marginal(int layer) const {
        return {marginal_.data() + static_cast<std::size_t>(layer) * vocab_, static_cast<std::size_t>(vocab_)};
    }

    Pmf pmf_for_key(const ContextKey& key) const {
        std::vector<std::uint64_t> w(static_cast<std::size_t>(vocab_));
        if (const std::uint32_t* c = counts(key)) {
            for (int s = 0; s < vocab_; ++s) w[s] = std::uint64_t{alpha_den} * c[s] + alpha_num;
            return quantize_pmf(w);
        }
        const auto m = key.layer < n_layers_ ? marginal(key.layer) : std::span<const std::uint64_t>{};
        std::uint64_t seen = 0;
        for (auto v : m) seen += v;
        if (seen == 0) return uniform_pmf(vocab_);
        for (int s = 0; s < vocab_; ++s) w[s] = std::uint64_t{alpha_den} * m[s] + alpha_num;
        return quantize_pmf(w);
    }

    PmfResult pmf(const MaskedQuery& query) const override {
        PmfResult res;
        if (observations_ == 0) {
            res.untrained_fallback = true;
            res.pmfs.assign(query.targets().size(), uniform_pmf(vocab_));
            return res;
        }
        std::unordered_map<std::uint64_t, std::size_t> local;
        res.pmfs.reserve(query.targets().size());
        for (const Cell& c : query.targets()) {
            const ContextKey key = context_key(query, c);
            auto [it, inserted] = local.try_emplace(key.pack(), res.pmfs.size());
            if (inserted) {
                res.pmfs.push_back(pmf_for_key(key));
            } else {
                res.pmfs.push_back(res.pmfs[it->second]);
            }
        }
        return res;
    }

    /// Model file: "CTX1", u16 vocab, u16 n_layers, u8 max key distance,
    /// u16 alpha_num, u16 alpha_den, u64 observations, per-layer marginal
    /// u64 counts, u64 record count, records (u64 key, u32 counts) sorted by
    /// key, then a u64 FNV-1a hash of everything before it.
    std::vector<std::uint8_t> serialize() const {
        ByteWriter w;
        w.tag("CTX1");
        w.u16(static_cast<std::uint16_t>(vocab_));
        w.u16(static_cast<std::uint16_t>(n_layers_));
        w.u8(static_cast<std::uint8_t>(kMaxKeyDistance));
        w.u16(static_cast<std::uint16_t>(alpha_num));
        w.u16(static_cast<std::uint16_t>(alpha_den));
        w.u64(observations_);
        for (auto v : marginal_) w.u64(v);
        std::map<std::uint64_t, std::size_t> sorted(index_.begin(), index_.end());
        w.u64(sorted.size());
        for (const auto& [key, off] : sorted) {
            w.u64(key);
            for (int s = 0; s < vocab_; ++s) w.u32(counts_[off + static_cast<std::size_t>(s)]);
        }
        const std::uint64_t h = fnv1a64(w.buffer());
        w.u64(h);
        return w.take();
    }

    static CountModel deserialize(std::span<const std::uint8_t> bytes) {
        if (bytes.size() < 8) throw FormatError("model file too short");
        ByteReader tail(bytes.subspan(bytes.size() - 8));
        if (tail.u64() != fnv1a64(bytes.first(bytes.size() - 8))) throw FormatError("model content hash mismatch");
        ByteReader r(bytes.first(bytes.size() - 8));
        r.expect_tag("CTX1");
        const int vocab = r.u16();
        const int n_layers = r.u16();
        if (r.u8() != kMaxKeyDistance) throw FormatError("model built with a different key distance cap");
        CountModel m(vocab, n_layers);
        m.alpha_num = r.u16();
        m.alpha_den = r.u16();
        if (m.alpha_den == 0 || m.alpha_num == 0) throw FormatError("invalid smoothing constant");
        m.observations_ = r.u64();
        for (auto& v : m.marginal_) v = r.u64();
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint64_t key = r.u64();
            const std::size_t off = m.counts_.size();
            m.index_.emplace(key, off);
            m.counts_.resize(off + static_cast<std::size_t>(vocab));
            for (int s = 0; s < vocab; ++s) m.counts_[off + static_cast<std::size_t>(s)] = r.u32();
        }
        if (r.remaining() != 0) throw FormatError("trailing bytes in model file");
        return m;
    }

private:
    int vocab_;
    int n_layers_;
    std::uint64_t observations_ = 0;
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::vector<std::uint32_t> counts_;
    std::vector<std::uint64_t> marginal_;
};

/// Fits a CountModel by random masking: per sample draw tau, a level K and a
/// first masked layer k, mask floor(T * mask_ratio(tau)) frames from layer k
/// through K, and count each masked cell's true token under its context key.
inline CountModel train_count_model(std::span<const TokenGrid> corpus, const TrainSchedule& schedule) {
    if (corpus.empty()) throw TrainingError("empty training corpus");
    const int vocab = corpus.front().vocab();
    const int n_layers = corpus.front().n_layers();
    for (const auto& g : corpus) {
        if (g.vocab() != vocab || g.n_layers() != n_layers) throw TrainingError("corpus grids disagree on shape");
    }
    if (schedule.n_coarse < 1 || schedule.n_coarse > n_layers) throw ConfigError("n_coarse out of range");

    CountModel model(vocab, n_layers);
    Rng rng(schedule.seed);
    std::vector<std::uint32_t> order;
    std::vector<char> masked;
    std::vector<std::int64_t> prev, next;

    for (std::uint64_t sample = 0; sample < schedule.samples; ++sample) {
        const TokenGrid& g = corpus[rng.below(corpus.size())];
        const std::size_t T = g.frames();
        const double tau = schedule.fixed_tau ? *schedule.fixed_tau : rng.uniform();
        const int K = schedule.fixed_level ? *schedule.fixed_level : rng.range(schedule.n_coarse, n_layers);
        const int k0 = schedule.fixed_layer ? *schedule.fixed_layer : rng.range(0, K - 1);
        if (T == 0) continue;
        const double ratio = std::clamp(schedule.mask_ratio(tau), 0.0, 1.0);
        const auto n_mask = static_cast<std::size_t>(std::floor(static_cast<double>(T) * ratio));
        if (n_mask == 0) continue;

        order.resize(T);
        for (std::size_t i = 0; i < T; ++i) order[i] = static_cast<std::uint32_t>(i);
        masked.assign(T, 0);
        for (std::size_t i = 0; i < n_mask; ++i) {
            const std::size_t pick = i + rng.below(T - i);
            std::swap(order[i], order[pick]);
            masked[order[i]] = 1;
        }

        prev.resize(T);
        next.resize(T);
        for (int k = k0; k < K; ++k) {
            auto vis = [&](std::size_t t) { return !masked[t] && k < std::min(K, g.level(t)); };
            std::int64_t last = -1;
            for (std::size_t t = 0; t < T; ++t) {
                prev[t] = last;
                if (vis(t)) last = static_cast<std::int64_t>(t);
            }
            last = -1;
            for (std::size_t t = T; t-- > 0;) {
                next[t] = last;
                if (vis(t)) last = static_cast<std::int64_t>(t);
            }
            for (std::size_t t = 0; t < T; ++t) {
                if (!masked[t] || k >= std::min(K, g.level(t))) continue;
                ContextKey key{k, vocab, 0, vocab, vocab, 0};
                if (prev[t] >= 0) {
                    key.left = g.at(static_cast<std::size_t>(prev[t]), k);
                    key.left_dist = cap_distance(static_cast<std::uint32_t>(static_cast<std::int64_t>(t) - prev[t]));
                }
                if (k == k0 && k > 0) key.below = g.at(t, k - 1);
                if (next[t] >= 0) {
                    key.right = g.at(static_cast<std::size_t>(next[t]), k);
                    key.right_dist = cap_distance(static_cast<std::uint32_t>(next[t] - static_cast<std::int64_t>(t)));
                }
                model.observe(key, g.at(t, k));
            }
        }
    }
    return model;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_CONTEXT_MODEL_HPP
