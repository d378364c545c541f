#ifndef SOUNDSPRING_METRICS_HPP
#define SOUNDSPRING_METRICS_HPP

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "common.hpp"
#include "token_grid.hpp"
#include "toy_codec.hpp"

namespace soundspring {

inline constexpr double kDbCap = 100.0;

namespace detail {

inline void check_pair(const AudioSignal& ref, const AudioSignal& est) {
    if (ref.size() != est.size()) throw ShapeError("signals differ in length");
}

inline double energy(const std::vector<double>& x) {
    double e = 0;
    for (double v : x) e += v * v;
    return e;
}

inline double capped_db(double num, double den) {
    if (den <= 0.0) return kDbCap;
    return std::min(kDbCap, 10.0 * std::log10(num / den));
}

}  // namespace detail

/// Scale-invariant SNR in dB, capped at +100.
inline double si_snr(const AudioSignal& ref, const AudioSignal& est) {
    detail::check_pair(ref, est);
    const double e_ref = detail::energy(ref.samples);
    if (e_ref == 0.0) throw DomainError("reference has zero energy");
    double dot = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) dot += est.samples[i] * ref.samples[i];
    const double alpha = dot / e_ref;
    double e_target = 0, e_noise = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double s = alpha * ref.samples[i];
        e_target += s * s;
        const double n = s - est.samples[i];
        e_noise += n * n;
    }
    // Rounding leaves a residual of order 1e-32 * energy for an exact scale.
    if (e_noise <= 1e-20 * e_target) return kDbCap;
    if (e_target == 0.0) return -kDbCap;
    return std::max(-kDbCap, detail::capped_db(e_target, e_noise));
}

/// Plain signal-to-distortion ratio in dB, capped at +100.
inline double sdr(const AudioSignal& ref, const AudioSignal& est) {
    detail::check_pair(ref, est);
    const double e_ref = detail::energy(ref.samples);
    if (e_ref == 0.0) throw DomainError("reference has zero energy");
    double e_err = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = ref.samples[i] - est.samples[i];
        e_err += d * d;
    }
    return detail::capped_db(e_ref, e_err);
}

struct MfccConfig {
    double window_ms = 25.0;
    double hop_ms = 10.0;
    int fft_size = 512;
    int mel_bands = 40;
    std::vector<int> coeff_counts{8, 16, 32, 64};
};

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters over [0, sr/2], one row per band over fft/2+1 bins.
inline std::vector<std::vector<double>> mel_filterbank(int bands, int fft_size, int sample_rate) {
    const int bins = fft_size / 2 + 1;
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> centers(static_cast<std::size_t>(bands) + 2);
    for (int i = 0; i < bands + 2; ++i) {
        centers[static_cast<std::size_t>(i)] = mel_to_hz(top * i / (bands + 1)) * fft_size / sample_rate;
    }
    std::vector<std::vector<double>> fb(static_cast<std::size_t>(bands), std::vector<double>(bins, 0.0));
    for (int b = 0; b < bands; ++b) {
        const double lo = centers[b], mid = centers[b + 1], hi = centers[b + 2];
        for (int k = 0; k < bins; ++k) {
            double w = 0;
            if (k > lo && k <= mid) w = (k - lo) / (mid - lo);
            else if (k > mid && k < hi) w = (hi - k) / (hi - mid);
            fb[b][k] = w;
        }
    }
    return fb;
}

struct FftwPlanDeleter {
    void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

// Power spectra, one row per analysis frame.
inline std::vector<std::vector<double>> power_frames(const AudioSignal& x, const MfccConfig& cfg) {
    const int win = static_cast<int>(std::lround(cfg.window_ms * x.sample_rate / 1000.0));
    const int hop = static_cast<int>(std::lround(cfg.hop_ms * x.sample_rate / 1000.0));
    if (win > cfg.fft_size) throw ConfigError("analysis window longer than the FFT");
    if (x.size() < static_cast<std::size_t>(win)) throw DomainError("signal shorter than one analysis window");
    const std::size_t n_frames = 1 + (x.size() - static_cast<std::size_t>(win)) / static_cast<std::size_t>(hop);
    const int bins = cfg.fft_size / 2 + 1;

    double* in = fftw_alloc_real(static_cast<std::size_t>(cfg.fft_size));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(bins));
    std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(fftw_plan_dft_r2c_1d(cfg.fft_size, in, out, FFTW_ESTIMATE));
    std::vector<double> hamming(static_cast<std::size_t>(win));
    for (int i = 0; i < win; ++i) hamming[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

    std::vector<std::vector<double>> frames(n_frames, std::vector<double>(bins));
    for (std::size_t f = 0; f < n_frames; ++f) {
        std::fill(in, in + cfg.fft_size, 0.0);
        for (int i = 0; i < win; ++i) in[i] = x.samples[f * hop + i] * hamming[i];
        fftw_execute(plan.get());
        for (int k = 0; k < bins; ++k) frames[f][k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
    plan.reset();
    fftw_free(in);
    fftw_free(out);
    return frames;
}

}  // namespace detail

/// MFCCs (frames x n_coeffs): Hamming-windowed power spectrum, mel
/// filterbank of max(mel_bands, n_coeffs) bands, natural log, orthonormal
/// DCT-II truncated to n_coeffs.
inline std::vector<std::vector<double>> mfcc(const AudioSignal& x, int n_coeffs, const MfccConfig& cfg = {}) {
    const int bands = std::max(cfg.mel_bands, n_coeffs);
    const auto fb = detail::mel_filterbank(bands, cfg.fft_size, x.sample_rate);
    const auto power = detail::power_frames(x, cfg);
    const DctBasis dct(bands, n_coeffs);
    std::vector<std::vector<double>> out(power.size(), std::vector<double>(n_coeffs));
    std::vector<double> logmel(static_cast<std::size_t>(bands));
    for (std::size_t f = 0; f < power.size(); ++f) {
        for (int b = 0; b < bands; ++b) {
            double e = 0;
            for (std::size_t k = 0; k < power[f].size(); ++k) e += fb[b][k] * power[f][k];
            logmel[b] = std::log(std::max(e, 1e-10));
        }
        dct.forward(logmel, out[f]);
    }
    return out;
}

/// Mean over the coefficient-count scales of the frame-summed squared
/// MFCC differences.
inline double mfcc_distance(const AudioSignal& ref, const AudioSignal& est, const MfccConfig& cfg = {}) {
    detail::check_pair(ref, est);
    if (cfg.coeff_counts.empty()) throw ConfigError("need at least one MFCC scale");
    double total = 0;
    for (int n : cfg.coeff_counts) {
        const auto a = mfcc(ref, n, cfg);
        const auto b = mfcc(est, n, cfg);
        for (std::size_t f = 0; f < a.size(); ++f) {
            for (int i = 0; i < n; ++i) {
                const double d = a[f][i] - b[f][i];
                total += d * d;
            }
        }
    }
    return total / static_cast<double>(cfg.coeff_counts.size());
}

/// Fraction of concealed (C) cells whose token matches the truth; nullopt
/// when nothing was concealed.
inline std::optional<double> token_accuracy(const TokenGrid& truth, const TokenGrid& recovered,
                                            const TokenStateGrid& states) {
    if (truth.frames() != recovered.frames() || truth.n_layers() != recovered.n_layers() ||
        states.frames() != truth.frames() || states.n_layers() != truth.n_layers()) {
        throw ShapeError("grids differ in shape");
    }
    std::size_t n = 0, hit = 0;
    for (std::size_t t = 0; t < truth.frames(); ++t) {
        for (int k = 0; k < truth.n_layers(); ++k) {
            if (states.at(t, k) != TokenState::C) continue;
            ++n;
            hit += truth.at(t, k) == recovered.at(t, k);
        }
    }
    if (n == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace soundspring

#endif  // SOUNDSPRING_METRICS_HPP
