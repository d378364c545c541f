#ifndef SOUNDSPRING_TOY_CODEC_HPP
#define SOUNDSPRING_TOY_CODEC_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "common.hpp"

namespace soundspring {

struct AudioSignal {
    std::vector<double> samples;
    int sample_rate = 16000;

    std::size_t size() const { return samples.size(); }
};

/// Row-major sequence of fixed-dimension feature vectors, one per frame.
class FeatureSequence {
public:
    FeatureSequence() = default;
    FeatureSequence(std::size_t frames, int dim) : dim_(dim), data_(frames * static_cast<std::size_t>(dim), 0.0) {}

    int dim() const { return dim_; }
    std::size_t frames() const { return dim_ == 0 ? 0 : data_.size() / static_cast<std::size_t>(dim_); }

    std::span<double> frame(std::size_t t) { return {data_.data() + t * dim_, static_cast<std::size_t>(dim_)}; }
    std::span<const double> frame(std::size_t t) const {
        return {data_.data() + t * dim_, static_cast<std::size_t>(dim_)};
    }

    void push_back(std::span<const double> v) {
        if (dim_ == 0 && data_.empty()) dim_ = static_cast<int>(v.size());
        if (static_cast<int>(v.size()) != dim_) throw ShapeError("feature dimension mismatch");
        data_.insert(data_.end(), v.begin(), v.end());
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

private:
    int dim_ = 0;
    std::vector<double> data_;
};

struct CodecConfig {
    int frame_len = 320;
    int dim = 64;

    void validate() const {
        if (frame_len <= 0) throw ConfigError("frame_len must be positive");
        if (dim <= 0 || dim > frame_len) throw ConfigError("dim must lie in (0, frame_len]");
    }
};

// Orthonormal DCT-II basis, rows = coefficients.
// basis[i * n + s] = c_i * cos(pi * (s + 0.5) * i / n)
class DctBasis {
public:
    DctBasis(int n, int rows) : n_(n), rows_(rows), basis_(static_cast<std::size_t>(n) * rows) {
        for (int i = 0; i < rows; ++i) {
            const double scale = i == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            for (int s = 0; s < n; ++s) {
                basis_[static_cast<std::size_t>(i) * n + s] =
                    scale * std::cos(std::numbers::pi * (s + 0.5) * i / n);
            }
        }
    }

    int size() const { return n_; }
    int rows() const { return rows_; }
    double at(int i, int s) const { return basis_[static_cast<std::size_t>(i) * n_ + s]; }

    void forward(std::span<const double> x, std::span<double> out) const {
        for (int i = 0; i < rows_; ++i) {
            double acc = 0.0;
            const double* row = basis_.data() + static_cast<std::size_t>(i) * n_;
            for (int s = 0; s < n_; ++s) acc += row[s] * x[s];
            out[i] = acc;
        }
    }

    void inverse(std::span<const double> coeffs, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        for (int i = 0; i < rows_; ++i) {
            const double c = coeffs[i];
            if (c == 0.0) continue;
            const double* row = basis_.data() + static_cast<std::size_t>(i) * n_;
            for (int s = 0; s < n_; ++s) out[s] += c * row[s];
        }
    }

private:
    int n_;
    int rows_;
    std::vector<double> basis_;
};

/// Frames the signal into non-overlapping blocks and keeps the first `dim`
/// orthonormal DCT-II coefficients of each block.
inline FeatureSequence analyze(const AudioSignal& signal, const CodecConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.frame_len);
    if (signal.samples.empty() || signal.samples.size() % n != 0) {
        throw LengthError("signal length must be a positive multiple of frame_len");
    }
    const DctBasis dct(cfg.frame_len, cfg.dim);
    FeatureSequence out(signal.samples.size() / n, cfg.dim);
    for (std::size_t t = 0; t < out.frames(); ++t) {
        dct.forward(std::span<const double>(signal.samples).subspan(t * n, n), out.frame(t));
    }
    return out;
}

/// Inverse of analyze with the discarded coefficients taken as zero; output
/// is clamped to [-1, 1].
inline AudioSignal synthesize(const FeatureSequence& features, const CodecConfig& cfg, int sample_rate = 16000) {
    cfg.validate();
    if (features.frames() > 0 && features.dim() != cfg.dim) throw ShapeError("feature dimension does not match codec");
    const DctBasis dct(cfg.frame_len, cfg.dim);
    AudioSignal out;
    out.sample_rate = sample_rate;
    const auto n = static_cast<std::size_t>(cfg.frame_len);
    out.samples.assign(features.frames() * n, 0.0);
    for (std::size_t t = 0; t < features.frames(); ++t) {
        auto dst = std::span<double>(out.samples).subspan(t * n, n);
        dct.inverse(features.frame(t), dst);
    }
    for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);
    return out;
}

// Zero-pads to a whole number of frames (at least one frame).
inline AudioSignal pad_to_frames(AudioSignal signal, int frame_len) {
    const std::size_t n = static_cast<std::size_t>(frame_len);
    std::size_t len = signal.samples.size();
    std::size_t padded = len == 0 ? n : ((len + n - 1) / n) * n;
    signal.samples.resize(padded, 0.0);
    return signal;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_TOY_CODEC_HPP
