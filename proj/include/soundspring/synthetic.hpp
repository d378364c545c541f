#ifndef SOUNDSPRING_SYNTHETIC_HPP
#define SOUNDSPRING_SYNTHETIC_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <tuple>
#include <vector>

#include "common.hpp"
#include "context_model.hpp"
#include "token_grid.hpp"
#include "toy_codec.hpp"

namespace soundspring {

/// Independent first-order Markov chain per layer over [0, vocab). Chains
/// start from their stationary law, so the source is stationary in time.
struct SyntheticTokenSource {
    int vocab = 16;
    std::vector<Eigen::MatrixXd> transitions;  // one vocab x vocab matrix per layer

    int n_layers() const { return static_cast<int>(transitions.size()); }

    void validate() const {
        if (transitions.empty()) throw ConfigError("source needs at least one layer");
        for (const auto& p : transitions) {
            if (p.rows() != vocab || p.cols() != vocab) throw ConfigError("transition matrix shape mismatch");
            if ((p.array() < 0.0).any()) throw ConfigError("negative transition probability");
            for (int i = 0; i < vocab; ++i) {
                if (std::abs(p.row(i).sum() - 1.0) > 1e-9) throw ConfigError("transition rows must sum to 1");
            }
        }
    }

    static SyntheticTokenSource identity(int vocab, int n_layers) {
        return {vocab, std::vector<Eigen::MatrixXd>(n_layers, Eigen::MatrixXd::Identity(vocab, vocab))};
    }

    static SyntheticTokenSource uniform(int vocab, int n_layers) {
        return {vocab, std::vector<Eigen::MatrixXd>(n_layers, Eigen::MatrixXd::Constant(vocab, vocab, 1.0 / vocab))};
    }

    /// P = stay * I + (1 - stay) * R with R a random row-stochastic matrix
    /// whose rows are peaked (entries u^sharpness, normalized).
    static SyntheticTokenSource sticky(int vocab, int n_layers, double stay, std::uint64_t seed,
                                       double sharpness = 3.0) {
        if (!(stay >= 0.0 && stay <= 1.0)) throw ConfigError("stay probability must lie in [0, 1]");
        Rng rng(seed);
        SyntheticTokenSource src{vocab, {}};
        for (int k = 0; k < n_layers; ++k) {
            Eigen::MatrixXd r(vocab, vocab);
            for (int i = 0; i < vocab; ++i) {
                for (int j = 0; j < vocab; ++j) r(i, j) = std::pow(rng.uniform() + 1e-3, sharpness);
                r.row(i) /= r.row(i).sum();
            }
            src.transitions.push_back(stay * Eigen::MatrixXd::Identity(vocab, vocab) + (1.0 - stay) * r);
        }
        return src;
    }
};

/// Stationary law of a row-stochastic matrix.
inline Eigen::VectorXd markov_stationary(const Eigen::MatrixXd& p) {
    const auto n = p.rows();
    Eigen::MatrixXd a = p.transpose() - Eigen::MatrixXd::Identity(n, n);
    a.row(n - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::VectorXd pi = a.fullPivLu().solve(rhs);
    if (!pi.allFinite()) {
        // Reducible chain (e.g. identity): fall back to the uniform start.
        return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    }
    return pi.cwiseMax(0.0) / pi.cwiseMax(0.0).sum();
}

inline TokenGrid generate_tokens(const SyntheticTokenSource& src, std::size_t frames, int level, std::uint64_t seed) {
    src.validate();
    TokenGrid g(frames, src.n_layers(), src.vocab, level);
    Rng rng(seed);
    auto draw = [&](const auto& probs) {
        double u = rng.uniform();
        for (int i = 0; i + 1 < src.vocab; ++i) {
            if (u < probs(i)) return i;
            u -= probs(i);
        }
        return src.vocab - 1;
    };
    for (int k = 0; k < src.n_layers(); ++k) {
        const Eigen::MatrixXd& p = src.transitions[k];
        const Eigen::VectorXd pi = markov_stationary(p);
        int x = draw(pi);
        for (std::size_t t = 0; t < frames; ++t) {
            if (t > 0) x = draw(p.row(x).transpose());
            if (k < level) g.at(t, k) = static_cast<std::uint16_t>(x);
        }
    }
    return g;
}

/// Closed-form quantities of a SyntheticTokenSource: conditional entropy and
/// Bayes prediction of X_t given the nearest observed same-layer tokens at
/// distances a (before) and b (after). Distance 0 means "not observed".
class SourceOracle {
public:
    explicit SourceOracle(const SyntheticTokenSource& src) : src_(src) {
        src.validate();
        for (const auto& p : src.transitions) pi_.push_back(markov_stationary(p));
    }

    const Eigen::MatrixXd& power(int layer, int d) const {
        auto key = std::pair{layer, d};
        auto it = powers_.find(key);
        if (it != powers_.end()) return it->second;
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(src_.vocab, src_.vocab);
        for (int i = 0; i < d; ++i) m = m * src_.transitions[layer];
        return powers_.emplace(key, std::move(m)).first->second;
    }

    const Eigen::VectorXd& stationary(int layer) const { return pi_[layer]; }

    // Unnormalized posterior over x given the observed neighbors.
    Eigen::VectorXd posterior(int layer, int left, int a, int right, int b) const {
        Eigen::VectorXd w = a > 0 ? Eigen::VectorXd(power(layer, a).row(left).transpose()) : pi_[layer];
        if (b > 0) w = w.cwiseProduct(power(layer, b).col(right));
        return w;
    }

    int bayes(int layer, int left, int a, int right, int b) const {
        const Eigen::VectorXd w = posterior(layer, left, a, right, b);
        int best = 0;
        for (int x = 1; x < src_.vocab; ++x) {
            if (w(x) > w(best)) best = x;
        }
        return best;
    }

    int marginal_mode(int layer) const {
        int best = 0;
        for (int x = 1; x < src_.vocab; ++x) {
            if (pi_[layer](x) > pi_[layer](best)) best = x;
        }
        return best;
    }

    // H(X_t | X_{t-a}, X_{t+b}) in bits.
    double conditional_entropy(int layer, int a, int b) const {
        auto key = std::tuple{layer, a, b};
        auto it = entropy_.find(key);
        if (it != entropy_.end()) return it->second;
        const int m = src_.vocab;
        const Eigen::VectorXd& pi = pi_[layer];
        double h = 0;
        auto add_row = [&](const Eigen::VectorXd& joint) {
            const double z = joint.sum();
            if (z <= 0) return;
            for (int x = 0; x < m; ++x) {
                if (joint(x) > 0) h -= joint(x) * std::log2(joint(x) / z);
            }
        };
        if (a > 0 && b > 0) {
            const auto& pa = power(layer, a);
            const auto& pb = power(layer, b);
            for (int u = 0; u < m; ++u) {
                if (pi(u) <= 0) continue;
                for (int w = 0; w < m; ++w) {
                    add_row(pi(u) * pa.row(u).transpose().cwiseProduct(pb.col(w)));
                }
            }
        } else if (a > 0) {
            const auto& pa = power(layer, a);
            for (int u = 0; u < m; ++u) add_row(pi(u) * pa.row(u).transpose());
        } else if (b > 0) {
            // p(x, w) = pi(x) P^b[x, w]; condition on w.
            const auto& pb = power(layer, b);
            for (int w = 0; w < m; ++w) add_row(pi.cwiseProduct(pb.col(w)));
        } else {
            add_row(pi);
        }
        entropy_.emplace(key, h);
        return h;
    }

    // Nearest visible same-layer neighbors of `c` in `q`, uncapped.
    static std::tuple<int, int, int, int> neighbors(const MaskedQuery& q, Cell c) {
        int left = 0, a = 0, right = 0, b = 0;
        for (std::uint32_t t = c.t; t > q.lo();) {
            --t;
            if (q.visible(t, c.k)) {
                left = q.grid().at(t, c.k);
                a = static_cast<int>(c.t - t);
                break;
            }
        }
        for (std::uint32_t t = c.t + 1; t < q.hi(); ++t) {
            if (q.visible(t, c.k)) {
                right = q.grid().at(t, c.k);
                b = static_cast<int>(t - c.t);
                break;
            }
        }
        return {left, a, right, b};
    }

    // Entropy of a target given everything visible in the query: by the
    // Markov property and layer independence only the nearest same-layer
    // neighbors matter.
    double query_entropy(const MaskedQuery& q, Cell c) const {
        auto [l, a, r, b] = neighbors(q, c);
        (void)l;
        (void)r;
        return conditional_entropy(c.k, a, b);
    }

    int query_bayes(const MaskedQuery& q, Cell c) const {
        auto [l, a, r, b] = neighbors(q, c);
        return bayes(c.k, l, a, r, b);
    }

private:
    const SyntheticTokenSource& src_;
    std::vector<Eigen::VectorXd> pi_;
    mutable std::map<std::pair<int, int>, Eigen::MatrixXd> powers_;
    mutable std::map<std::tuple<int, int, int>, double> entropy_;
};

/// Plug-in entropy estimate (bits) of a token sequence.
inline double empirical_entropy(const std::vector<std::uint16_t>& tokens, int vocab) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(vocab), 0);
    for (auto t : tokens) ++counts[t];
    double h = 0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(tokens.size());
        h -= p * std::log2(p);
    }
    return h;
}

// Synthetic audio ----------------------------------------------------------------

struct AudioSynthConfig {
    int sample_rate = 16000;
    int frame_len = 320;       // partials lock to sample_rate / frame_len
    int partials = 3;          // sinusoids per note
    int max_harmonic = 12;     // of the frame rate
    double amplitude = 0.6;    // peak of the sinusoid mixture
    double noise = 0.01;       // AR(1) innovation std
    double ar = 0.9;           // AR(1) coefficient
    int min_note_frames = 8;
    int max_note_frames = 40;
};

/// Seeded notes of frame-locked sinusoid mixtures plus AR(1) noise, clamped
/// to [-1, 1]. Frame-locked partials make every frame of a note identical
/// up to noise, so tokens repeat over time as they do for sustained sounds.
inline AudioSignal generate_audio(std::size_t n_samples, std::uint64_t seed, const AudioSynthConfig& cfg = {}) {
    AudioSignal out;
    out.sample_rate = cfg.sample_rate;
    out.samples.resize(n_samples);
    Rng rng(seed);
    const double base = static_cast<double>(cfg.sample_rate) / cfg.frame_len;
    std::size_t pos = 0;
    double ar_state = 0;
    while (pos < n_samples) {
        const int frames = rng.range(cfg.min_note_frames, cfg.max_note_frames);
        std::vector<double> freq, amp, phase;
        double amp_sum = 0;
        for (int p = 0; p < cfg.partials; ++p) {
            freq.push_back(base * rng.range(1, cfg.max_harmonic));
            amp.push_back(0.2 + rng.uniform());
            phase.push_back(2.0 * std::numbers::pi * rng.uniform());
            amp_sum += amp.back();
        }
        const std::size_t end = std::min(n_samples, pos + static_cast<std::size_t>(frames) * cfg.frame_len);
        for (std::size_t i = pos; i < end; ++i) {
            const double tt = static_cast<double>(i - pos) / cfg.sample_rate;
            double v = 0;
            for (int p = 0; p < cfg.partials; ++p) v += amp[p] * std::sin(2.0 * std::numbers::pi * freq[p] * tt + phase[p]);
            v *= amp_sum > 0 ? cfg.amplitude / amp_sum : 0.0;
            if (cfg.noise > 0) {
                ar_state = cfg.ar * ar_state + cfg.noise * rng.normal();
                v += ar_state;
            }
            out.samples[i] = std::clamp(v, -1.0, 1.0);
        }
        pos = end;
    }
    return out;
}

inline AudioSignal sinusoid(double freq, double amplitude, std::size_t n_samples, int sample_rate = 16000) {
    AudioSignal out;
    out.sample_rate = sample_rate;
    out.samples.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        out.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sample_rate);
    }
    return out;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_SYNTHETIC_HPP
