#include <gtest/gtest.h>

#include <cmath>
#include <soundspring/entropy_coder.hpp>

using namespace soundspring;

namespace {

Pmf random_pmf(Rng& rng, int m) {
    std::vector<std::uint64_t> w(static_cast<std::size_t>(m));
    const bool peaked = rng.below(2);
    for (auto& v : w) v = peaked ? (rng.below(8) == 0 ? rng.below(100000) : rng.below(3)) : rng.below(1000);
    return quantize_pmf(w);
}

double ideal_bits(const std::vector<std::uint16_t>& tokens, const std::vector<Pmf>& pmfs) {
    double b = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) b += pmfs[i].bits(tokens[i]);
    return b;
}

}  // namespace

TEST(RangeCoder, EmptyInput) {
    const auto c = encode_symbols({}, {});
    EXPECT_EQ(c.n_symbols, 0u);
    EXPECT_LE(c.bytes.size(), 8u);
    EXPECT_TRUE(decode_symbols(c, {}).empty());
}

TEST(RangeCoder, UniformTenBits) {
    Rng rng(1);
    std::vector<std::uint16_t> tokens(1000);
    for (auto& t : tokens) t = static_cast<std::uint16_t>(rng.below(1024));
    const std::vector<Pmf> pmfs(1000, uniform_pmf(1024));
    const auto c = encode_symbols(tokens, pmfs);
    EXPECT_GE(c.bytes.size(), 1250u);
    EXPECT_LE(c.bytes.size(), 1258u);
    EXPECT_EQ(decode_symbols(c, pmfs), tokens);
}

TEST(RangeCoder, RandomRoundTripsAndBound) {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = rng.range(2, 1024);
        const std::size_t n = rng.below(400);
        std::vector<Pmf> pmfs;
        std::vector<std::uint16_t> tokens;
        for (std::size_t i = 0; i < n; ++i) {
            pmfs.push_back(random_pmf(rng, m));
            // Mostly draw from the pmf itself, sometimes pick rare symbols.
            std::uint16_t s;
            if (rng.below(4) == 0) {
                s = static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(m)));
            } else {
                s = static_cast<std::uint16_t>(pmfs.back().lookup(static_cast<std::uint32_t>(rng.below(kPmfTotal))));
            }
            tokens.push_back(s);
        }
        const auto c = encode_symbols(tokens, pmfs);
        ASSERT_EQ(decode_symbols(c, pmfs), tokens) << "trial " << trial;
        EXPECT_LE(c.bytes.size() * 8.0, ideal_bits(tokens, pmfs) + 64.0);
        EXPECT_LE(static_cast<double>(c.bytes.size()), ideal_bits(tokens, pmfs) / 8.0 + 8.0);
    }
}

TEST(RangeCoder, NearCertainSymbol) {
    std::vector<std::uint32_t> f(2, 1);
    f[0] = 65535;
    const std::vector<Pmf> pmfs{Pmf(f)};
    const std::vector<std::uint16_t> tok{0};
    const auto c = encode_symbols(tok, pmfs);
    EXPECT_LE(c.bytes.size(), 9u);
    EXPECT_EQ(decode_symbols(c, pmfs), tok);
    // The improbable symbol also round-trips.
    const std::vector<std::uint16_t> rare{1};
    EXPECT_EQ(decode_symbols(encode_symbols(rare, pmfs), pmfs), rare);
}

TEST(RangeCoder, LongCarryRuns) {
    // Long runs of the most probable symbol push low toward 0xFF.. patterns.
    std::vector<std::uint32_t> f(4, 1);
    f[3] = 65533;
    const Pmf p(f);
    std::vector<std::uint16_t> tokens(50000, 3);
    for (std::size_t i = 0; i < tokens.size(); i += 997) tokens[i] = static_cast<std::uint16_t>(i % 4);
    const std::vector<Pmf> pmfs(tokens.size(), p);
    EXPECT_EQ(decode_symbols(encode_symbols(tokens, pmfs), pmfs), tokens);
}

TEST(RangeCoder, TruncatedPayload) {
    Rng rng(3);
    std::vector<std::uint16_t> tokens(200);
    for (auto& t : tokens) t = static_cast<std::uint16_t>(rng.below(256));
    const std::vector<Pmf> pmfs(200, uniform_pmf(256));
    auto c = encode_symbols(tokens, pmfs);
    c.bytes.pop_back();
    EXPECT_THROW(decode_symbols(c, pmfs), DecodeError);
    auto padded = encode_symbols(tokens, pmfs);
    padded.bytes.push_back(0);
    EXPECT_THROW(decode_symbols(padded, pmfs), DecodeError);
}

TEST(RangeCoder, Deterministic) {
    std::vector<std::uint16_t> tokens{1, 2, 3, 4, 5};
    const std::vector<Pmf> pmfs(5, uniform_pmf(7));
    EXPECT_EQ(encode_symbols(tokens, pmfs), encode_symbols(tokens, pmfs));
}

TEST(RangeCoder, ContractErrors) {
    const std::vector<Pmf> pmfs(1, uniform_pmf(4));
    const std::vector<std::uint16_t> bad{4};
    EXPECT_THROW(encode_symbols(bad, pmfs), VocabularyError);
    const std::vector<std::uint16_t> two{0, 1};
    EXPECT_THROW(encode_symbols(two, pmfs), ShapeError);
    EXPECT_THROW(Pmf(std::vector<std::uint32_t>{0, 65536}), CoderError);
    EXPECT_THROW(Pmf(std::vector<std::uint32_t>{1, 2}), CoderError);
}

TEST(RangeCoder, ShortFlushAndTailCheck) {
    Rng rng(5);
    double worst = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int m = rng.range(2, 300);
        const int len = rng.range(0, 200);
        std::vector<Pmf> pmfs;
        std::vector<std::uint16_t> tokens;
        double ideal = 0;
        for (int i = 0; i < len; ++i) {
            std::vector<std::uint64_t> w(static_cast<std::size_t>(m));
            const std::uint64_t spread = rng.below(2) ? 5 : 1000;
            for (auto& x : w) x = 1 + rng.below(spread);
            pmfs.push_back(quantize_pmf(w));
            tokens.push_back(static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(m))));
            ideal += pmfs.back().bits(tokens.back());
        }
        const auto c = encode_symbols(tokens, pmfs);
        worst = std::max(worst, 8.0 * static_cast<double>(c.bytes.size()) - ideal);
        ASSERT_EQ(decode_symbols(c, pmfs), tokens);
        if (!c.bytes.empty()) {
            auto cut = c;
            cut.bytes.pop_back();
            EXPECT_THROW(decode_symbols(cut, pmfs), DecodeError) << "trial " << trial;
        }
        auto longer = c;
        longer.bytes.push_back(static_cast<std::uint8_t>(rng.below(256)));
        EXPECT_THROW(decode_symbols(longer, pmfs), DecodeError) << "trial " << trial;
    }
    // 8-bit end check plus at most one byte of flush.
    EXPECT_LE(worst, 16.5);
}
