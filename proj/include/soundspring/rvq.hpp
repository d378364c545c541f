#ifndef SOUNDSPRING_RVQ_HPP
#define SOUNDSPRING_RVQ_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "common.hpp"
#include "token_grid.hpp"
#include "toy_codec.hpp"

namespace soundspring {

/// One RVQ layer: `vocab` entries of dimension `dim`, entry 0 is the zero vector.
class Codebook {
public:
    Codebook() = default;
    Codebook(int vocab, int dim) : vocab_(vocab), dim_(dim), entries_(static_cast<std::size_t>(vocab) * dim, 0.0f) {
        if (vocab < 2) throw ConfigError("codebook needs at least 2 entries");
        if (dim < 1) throw ConfigError("codebook dimension must be positive");
    }

    int vocab() const { return vocab_; }
    int dim() const { return dim_; }

    std::span<const float> entry(int m) const {
        return {entries_.data() + static_cast<std::size_t>(m) * dim_, static_cast<std::size_t>(dim_)};
    }
    std::span<float> entry(int m) {
        return {entries_.data() + static_cast<std::size_t>(m) * dim_, static_cast<std::size_t>(dim_)};
    }

    // Nearest entry by squared distance, lowest index on ties.
    int nearest(std::span<const double> v, double* dist_out = nullptr) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int m = 0; m < vocab_; ++m) {
            const float* e = entries_.data() + static_cast<std::size_t>(m) * dim_;
            double d = 0.0;
            for (int i = 0; i < dim_; ++i) {
                const double diff = v[i] - e[i];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = m;
            }
        }
        if (dist_out) *dist_out = best_d;
        return best;
    }

    const std::vector<float>& raw() const { return entries_; }
    std::vector<float>& raw() { return entries_; }

private:
    int vocab_ = 0;
    int dim_ = 0;
    std::vector<float> entries_;
};

struct RvqCodec {
    std::vector<Codebook> codebooks;
    int n_coarse = 1;

    int n_layers() const { return static_cast<int>(codebooks.size()); }
    int vocab() const { return codebooks.empty() ? 0 : codebooks.front().vocab(); }
    int dim() const { return codebooks.empty() ? 0 : codebooks.front().dim(); }

    void validate() const {
        if (codebooks.empty()) throw ConfigError("codec has no codebooks");
        for (const auto& cb : codebooks) {
            if (cb.vocab() != vocab() || cb.dim() != dim()) throw ConfigError("codebooks disagree on shape");
        }
        if (n_coarse < 1 || n_coarse >= n_layers()) throw ConfigError("need 1 <= n_coarse < n_layers");
    }
};

/// Recursively quantizes each frame's residual with the first `level`
/// codebooks. Every frame of the returned grid records `level`.
inline TokenGrid quantize(const FeatureSequence& features, const RvqCodec& codec, int level) {
    if (level < codec.n_coarse || level > codec.n_layers()) throw LevelError("level must lie in [n_coarse, n_layers]");
    if (features.frames() > 0 && features.dim() != codec.dim()) throw ShapeError("feature dimension mismatch");
    TokenGrid grid(features.frames(), codec.n_layers(), codec.vocab(), level);
    std::vector<double> residual(static_cast<std::size_t>(codec.dim()));
    for (std::size_t t = 0; t < features.frames(); ++t) {
        auto y = features.frame(t);
        std::copy(y.begin(), y.end(), residual.begin());
        for (int k = 0; k < level; ++k) {
            const Codebook& cb = codec.codebooks[k];
            const int m = cb.nearest(residual);
            grid.at(t, k) = static_cast<std::uint16_t>(m);
            auto e = cb.entry(m);
            for (int i = 0; i < codec.dim(); ++i) residual[i] -= e[i];
        }
    }
    return grid;
}

/// Per-frame levels (variable-rate coding).
inline TokenGrid quantize(const FeatureSequence& features, const RvqCodec& codec,
                          const std::vector<std::uint8_t>& levels) {
    if (levels.size() != features.frames()) throw ShapeError("one level per frame required");
    const int top = levels.empty() ? codec.n_layers() : *std::max_element(levels.begin(), levels.end());
    TokenGrid grid = quantize(features, codec, std::max(top, codec.n_coarse));
    for (std::size_t t = 0; t < levels.size(); ++t) {
        if (levels[t] < codec.n_coarse || levels[t] > codec.n_layers()) throw LevelError("level out of range");
        grid.set_level(t, levels[t]);
        for (int k = levels[t]; k < codec.n_layers(); ++k) grid.at(t, k) = 0;
    }
    return grid;
}

/// Sums the selected codewords over each frame's first `depth[t]` layers.
inline FeatureSequence dequantize(const TokenGrid& grid, const RvqCodec& codec, const std::vector<int>& depth) {
    if (depth.size() != grid.frames()) throw ShapeError("one depth per frame required");
    if (grid.n_layers() > codec.n_layers()) throw ShapeError("grid has more layers than the codec");
    FeatureSequence out(grid.frames(), codec.dim());
    for (std::size_t t = 0; t < grid.frames(); ++t) {
        if (depth[t] < 0 || depth[t] > grid.n_layers()) throw LevelError("depth out of range");
        auto y = out.frame(t);
        for (int k = 0; k < depth[t]; ++k) {
            const int m = grid.at(t, k);
            if (m >= codec.vocab()) throw VocabularyError("token outside the codebook");
            auto e = codec.codebooks[k].entry(m);
            for (int i = 0; i < codec.dim(); ++i) y[i] += e[i];
        }
    }
    return out;
}

inline FeatureSequence dequantize(const TokenGrid& grid, const RvqCodec& codec) {
    std::vector<int> depth(grid.frames());
    for (std::size_t t = 0; t < grid.frames(); ++t) depth[t] = grid.level(t);
    return dequantize(grid, codec, depth);
}

struct RvqTrainConfig {
    int n_layers = 8;
    int n_coarse = 2;
    int vocab = 64;
    int epochs = 20;
    std::uint64_t seed = 1;
    double decay = 0.99;
    int batch = 256;
};

namespace detail {

// EMA k-means for one layer. Entry 0 stays zero; entries unused for a whole
// epoch are reseeded from the worst-quantized residuals.
inline Codebook train_layer(const FeatureSequence& residuals, const RvqTrainConfig& cfg, Rng& rng) {
    const int dim = residuals.dim();
    const std::size_t n = residuals.frames();
    const int vocab = cfg.vocab;
    Codebook cb(vocab, dim);

    // Distinct corpus rows for the non-reserved entries (partial Fisher-Yates).
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int m = 1; m < vocab; ++m) {
        const std::size_t pick = static_cast<std::size_t>(m - 1) + rng.below(n - static_cast<std::size_t>(m - 1));
        std::swap(order[static_cast<std::size_t>(m - 1)], order[pick]);
        auto src = residuals.frame(order[static_cast<std::size_t>(m - 1)]);
        auto dst = cb.entry(m);
        for (int i = 0; i < dim; ++i) dst[i] = static_cast<float>(src[i]);
    }

    std::vector<double> ema_count(static_cast<std::size_t>(vocab), 1.0);
    std::vector<double> ema_sum(static_cast<std::size_t>(vocab) * dim);
    for (int m = 0; m < vocab; ++m) {
        auto e = cb.entry(m);
        for (int i = 0; i < dim; ++i) ema_sum[static_cast<std::size_t>(m) * dim + i] = e[i];
    }

    std::vector<double> batch_count(static_cast<std::size_t>(vocab));
    std::vector<double> batch_sum(static_cast<std::size_t>(vocab) * dim);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<char> used(static_cast<std::size_t>(vocab), 0);

        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            std::fill(batch_count.begin(), batch_count.end(), 0.0);
            std::fill(batch_sum.begin(), batch_sum.end(), 0.0);
            for (std::size_t b = start; b < stop; ++b) {
                auto v = residuals.frame(perm[b]);
                const int m = cb.nearest(v);
                used[static_cast<std::size_t>(m)] = 1;
                batch_count[static_cast<std::size_t>(m)] += 1.0;
                for (int i = 0; i < dim; ++i) batch_sum[static_cast<std::size_t>(m) * dim + i] += v[i];
            }
            for (int m = 1; m < vocab; ++m) {
                const auto mi = static_cast<std::size_t>(m);
                ema_count[mi] = cfg.decay * ema_count[mi] + (1.0 - cfg.decay) * batch_count[mi];
                auto e = cb.entry(m);
                for (int i = 0; i < dim; ++i) {
                    double& s = ema_sum[mi * dim + i];
                    s = cfg.decay * s + (1.0 - cfg.decay) * batch_sum[mi * dim + i];
                    if (ema_count[mi] > 1e-12) e[i] = static_cast<float>(s / ema_count[mi]);
                }
            }
        }

        std::vector<int> dead;
        for (int m = 1; m < vocab; ++m) {
            if (!used[static_cast<std::size_t>(m)]) dead.push_back(m);
        }
        if (dead.empty()) continue;

        std::vector<double> err(n);
        for (std::size_t r = 0; r < n; ++r) cb.nearest(residuals.frame(r), &err[r]);
        std::vector<std::size_t> worst(n);
        std::iota(worst.begin(), worst.end(), std::size_t{0});
        std::stable_sort(worst.begin(), worst.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
        for (std::size_t d = 0; d < dead.size(); ++d) {
            const int m = dead[d];
            const auto mi = static_cast<std::size_t>(m);
            auto src = residuals.frame(worst[d % n]);
            auto e = cb.entry(m);
            ema_count[mi] = 1.0;
            for (int i = 0; i < dim; ++i) {
                e[i] = static_cast<float>(src[i]);
                ema_sum[mi * dim + i] = e[i];
            }
        }
    }
    return cb;
}

}  // namespace detail

/// Layer-by-layer codebook training: layer k is fit on the residuals left by
/// layers 0..k-1.
inline RvqCodec train_codebooks(const FeatureSequence& corpus, const RvqTrainConfig& cfg) {
    if (cfg.vocab < 2) throw ConfigError("vocab must be >= 2");
    if (cfg.n_layers < 2 || cfg.n_layers > 255) throw ConfigError("n_layers must lie in [2, 255]");
    // Entry 0 is reserved, so vocab - 1 vectors are enough to seed every entry.
    if (corpus.frames() < static_cast<std::size_t>(cfg.vocab - 1)) {
        throw TrainingError("corpus must hold at least vocab - 1 vectors");
    }
    RvqCodec codec;
    codec.n_coarse = cfg.n_coarse;
    Rng rng(cfg.seed);
    FeatureSequence residuals = corpus;
    for (int k = 0; k < cfg.n_layers; ++k) {
        Codebook cb = detail::train_layer(residuals, cfg, rng);
        for (std::size_t t = 0; t < residuals.frames(); ++t) {
            auto r = residuals.frame(t);
            auto e = cb.entry(cb.nearest(r));
            for (int i = 0; i < residuals.dim(); ++i) r[i] -= e[i];
        }
        codec.codebooks.push_back(std::move(cb));
    }
    codec.validate();
    return codec;
}

/// Codebook file: "RVQ1", u16 vocab, u16 dim, u16 n_layers, u16 n_coarse, then
/// float32 entries layer-major, entry-major.
inline std::vector<std::uint8_t> serialize_codec(const RvqCodec& codec) {
    codec.validate();
    ByteWriter w;
    w.tag("RVQ1");
    w.u16(static_cast<std::uint16_t>(codec.vocab()));
    w.u16(static_cast<std::uint16_t>(codec.dim()));
    w.u16(static_cast<std::uint16_t>(codec.n_layers()));
    w.u16(static_cast<std::uint16_t>(codec.n_coarse));
    for (const auto& cb : codec.codebooks) {
        for (float v : cb.raw()) w.f32(v);
    }
    return w.take();
}

inline RvqCodec deserialize_codec(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_tag("RVQ1");
    const int vocab = r.u16();
    const int dim = r.u16();
    const int n_layers = r.u16();
    RvqCodec codec;
    codec.n_coarse = r.u16();
    for (int k = 0; k < n_layers; ++k) {
        Codebook cb(vocab, dim);
        for (float& v : cb.raw()) {
            v = r.f32();
            if (!std::isfinite(v)) throw FormatError("non-finite codebook entry");
        }
        codec.codebooks.push_back(std::move(cb));
    }
    codec.validate();
    return codec;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_RVQ_HPP
