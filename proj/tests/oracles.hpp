// Independent reference computations used by the tests. Written without
// the library's own helpers so a shared bug cannot hide in both.
#ifndef SOUNDSPRING_TESTS_ORACLES_HPP
#define SOUNDSPRING_TESTS_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

// Orthonormal DCT-II matrix, straight from the definition:
// C[i][s] = sqrt((i == 0 ? 1 : 2) / n) * cos(pi * (2s + 1) * i / (2n)).
inline Matrix dct_matrix(int n) {
    Matrix c(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
        for (int s = 0; s < n; ++s) {
            c[i][s] = std::sqrt((i == 0 ? 1.0 : 2.0) / n) * std::cos(std::numbers::pi * (2 * s + 1) * i / (2.0 * n));
        }
    }
    return c;
}

// Periodic slicing by direct substitution into t = S n + l, 1-based.
inline std::vector<std::set<int>> periodic_groups_1based(int gos_len, int s) {
    std::vector<std::set<int>> g(s);
    for (int l = 1; l <= s; ++l) {
        for (int n = 0;; ++n) {
            const int t = s * n + l;
            if (t > gos_len) break;
            g[l - 1].insert(t);
        }
    }
    return g;
}

// Packed coarse payload size in bytes.
inline std::size_t packed_bytes(std::size_t frames, int layers, int vocab) {
    int bits = 0;
    while ((1 << bits) < vocab) ++bits;
    return (frames * layers * bits + 7) / 8;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.size(), m = b[0].size(), k = b.size();
    Matrix c(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t x = 0; x < k; ++x)
            for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][x] * b[x][j];
    return c;
}

inline Matrix matpow(const Matrix& p, int d) {
    Matrix r(p.size(), std::vector<double>(p.size(), 0.0));
    for (std::size_t i = 0; i < p.size(); ++i) r[i][i] = 1.0;
    for (int i = 0; i < d; ++i) r = matmul(r, p);
    return r;
}

// Stationary law by power iteration from the uniform start.
inline std::vector<double> stationary(const Matrix& p, int iters = 20000) {
    std::vector<double> pi(p.size(), 1.0 / p.size());
    for (int it = 0; it < iters; ++it) {
        std::vector<double> next(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i)
            for (std::size_t j = 0; j < p.size(); ++j) next[j] += pi[i] * p[i][j];
        pi = next;
    }
    return pi;
}

// Markov loss channel: long-run loss ratio and mean burst length computed
// from the joint law of two consecutive packets.
inline double channel_loss(const Matrix& p, const std::vector<double>& loss) {
    const auto pi = stationary(p);
    double l = 0;
    for (std::size_t i = 0; i < pi.size(); ++i) l += pi[i] * loss[i];
    return l;
}

inline double channel_mean_burst(const Matrix& p, const std::vector<double>& loss) {
    const auto pi = stationary(p);
    double onset = 0;  // P(packet t-1 delivered, packet t lost)
    for (std::size_t i = 0; i < pi.size(); ++i)
        for (std::size_t j = 0; j < pi.size(); ++j) onset += pi[i] * (1 - loss[i]) * p[i][j] * loss[j];
    return channel_loss(p, loss) / onset;
}

// H(X_t | X_{t-a}, X_{t+b}) for a stationary chain by full enumeration of
// the joint p(u, x, w). a or b == 0 drops that side.
inline double conditional_entropy(const Matrix& p, int a, int b) {
    const int m = static_cast<int>(p.size());
    const auto pi = stationary(p);
    const Matrix pa = matpow(p, a), pb = matpow(p, b);
    double h = 0;
    const int nu = a > 0 ? m : 1, nw = b > 0 ? m : 1;
    for (int u = 0; u < nu; ++u) {
        for (int w = 0; w < nw; ++w) {
            std::vector<double> joint(m);
            double z = 0;
            for (int x = 0; x < m; ++x) {
                double v = a > 0 ? pi[u] * pa[u][x] : pi[x];
                if (b > 0) v *= pb[x][w];
                joint[x] = v;
                z += v;
            }
            for (int x = 0; x < m; ++x)
                if (joint[x] > 0) h -= joint[x] * std::log2(joint[x] / z);
        }
    }
    return h;
}

inline int bayes(const Matrix& p, int u, int a, int w, int b) {
    const int m = static_cast<int>(p.size());
    const auto pi = stationary(p);
    const Matrix pa = matpow(p, a), pb = matpow(p, b);
    int best = 0;
    double best_v = -1;
    for (int x = 0; x < m; ++x) {
        double v = a > 0 ? pa[u][x] : pi[x];
        if (b > 0) v *= pb[x][w];
        if (v > best_v) {
            best_v = v;
            best = x;
        }
    }
    return best;
}

}  // namespace oracle

#endif
