#ifndef SOUNDSPRING_PMF_HPP
#define SOUNDSPRING_PMF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "common.hpp"

namespace soundspring {

inline constexpr std::uint32_t kPmfTotalBits = 16;
inline constexpr std::uint32_t kPmfTotal = 1u << kPmfTotalBits;

/// Quantized probability table over the token vocabulary. Every entry is at
/// least 1 and the entries sum to exactly 2^16, so an encoder and a decoder
/// that build the same Pmf agree bit for bit.
class Pmf {
public:
    Pmf() = default;

    // Takes frequencies that already satisfy the invariants.
    explicit Pmf(std::vector<std::uint32_t> freq) : freq_(std::move(freq)) {
        cum_.resize(freq_.size() + 1);
        cum_[0] = 0;
        for (std::size_t i = 0; i < freq_.size(); ++i) {
            if (freq_[i] == 0) throw CoderError("zero-frequency symbol in pmf");
            cum_[i + 1] = cum_[i] + freq_[i];
        }
        if (cum_.back() != kPmfTotal) throw CoderError("pmf does not sum to 2^16");
    }

    std::size_t size() const { return freq_.size(); }
    std::uint32_t freq(std::size_t s) const { return freq_[s]; }
    std::uint32_t cum(std::size_t s) const { return cum_[s]; }
    const std::vector<std::uint32_t>& freqs() const { return freq_; }

    double prob(std::size_t s) const { return static_cast<double>(freq_[s]) / kPmfTotal; }
    double bits(std::size_t s) const { return -std::log2(prob(s)); }

    // Symbol whose cumulative interval contains `target` (< 2^16).
    std::size_t lookup(std::uint32_t target) const {
        auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
        return static_cast<std::size_t>(it - cum_.begin()) - 1;
    }

    // Most probable symbol, lowest index on ties.
    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(freq_.begin(), freq_.end()) - freq_.begin());
    }

    friend bool operator==(const Pmf&, const Pmf&) = default;

private:
    std::vector<std::uint32_t> freq_;
    std::vector<std::uint32_t> cum_;
};

/// floor(2^16 / M) per symbol, remainder to the lowest indices.
inline Pmf uniform_pmf(int vocab) {
    if (vocab < 2 || static_cast<std::uint32_t>(vocab) > kPmfTotal / 2) throw ConfigError("vocab out of range for pmf");
    const std::uint32_t m = static_cast<std::uint32_t>(vocab);
    std::vector<std::uint32_t> f(m, kPmfTotal / m);
    for (std::uint32_t i = 0; i < kPmfTotal % m; ++i) ++f[i];
    return Pmf(std::move(f));
}

/// Quantizes non-negative integer weights to a Pmf with integer arithmetic
/// only: floor shares, largest-remainder rounding (lowest index on ties),
/// then every zero entry is raised to 1 with the deficit taken from the
/// largest entries.
inline Pmf quantize_pmf(std::span<const std::uint64_t> weights) {
    const std::size_t m = weights.size();
    if (m < 2 || m > kPmfTotal / 2) throw ConfigError("vocab out of range for pmf");
    unsigned __int128 total = 0;
    for (auto w : weights) total += w;
    if (total == 0) {
        return uniform_pmf(static_cast<int>(m));
    }

    std::vector<std::uint32_t> f(m);
    std::vector<std::uint64_t> rem(m);
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const unsigned __int128 scaled = static_cast<unsigned __int128>(weights[i]) * kPmfTotal;
        f[i] = static_cast<std::uint32_t>(scaled / total);
        rem[i] = static_cast<std::uint64_t>(scaled % total);
        assigned += f[i];
    }
    std::size_t left = kPmfTotal - assigned;  // < m
    if (left > 0) {
        std::vector<std::uint32_t> idx(m);
        std::iota(idx.begin(), idx.end(), 0u);
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(left), idx.end(),
                          [&](std::uint32_t a, std::uint32_t b) { return rem[a] != rem[b] ? rem[a] > rem[b] : a < b; });
        for (std::size_t i = 0; i < left; ++i) ++f[idx[i]];
    }

    std::uint32_t deficit = 0;
    for (auto& v : f) {
        if (v == 0) {
            v = 1;
            ++deficit;
        }
    }
    while (deficit > 0) {
        const auto big = static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin());
        // Largest entry absorbs the deficit, keeping itself >= 1.
        const std::uint32_t take = std::min(deficit, f[big] - 1);
        if (take == 0) throw CoderError("cannot satisfy pmf positivity");
        f[big] -= take;
        deficit -= take;
    }
    return Pmf(std::move(f));
}

}  // namespace soundspring

#endif  // SOUNDSPRING_PMF_HPP
