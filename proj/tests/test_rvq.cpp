#include <gtest/gtest.h>

#include <soundspring/rvq.hpp>

using namespace soundspring;

namespace {

FeatureSequence random_features(std::size_t n, int dim, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    FeatureSequence f(n, dim);
    for (auto& v : f.data()) v = scale * rng.normal();
    return f;
}

RvqCodec small_codec(std::uint64_t seed = 4) {
    RvqTrainConfig cfg;
    cfg.n_layers = 4;
    cfg.n_coarse = 1;
    cfg.vocab = 16;
    cfg.epochs = 4;
    cfg.seed = seed;
    return train_codebooks(random_features(600, 8, 17), cfg);
}

double sqdist(std::span<const double> a, std::span<const double> b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

}  // namespace

TEST(Rvq, EntryZeroIsZero) {
    const auto codec = small_codec();
    for (const auto& cb : codec.codebooks) {
        for (float v : cb.entry(0)) EXPECT_EQ(v, 0.0f);
    }
}

TEST(Rvq, ExactEntryAbsorbsResidual) {
    const auto codec = small_codec();
    FeatureSequence f(1, 8);
    auto e7 = codec.codebooks[0].entry(7);
    for (int i = 0; i < 8; ++i) f.frame(0)[i] = e7[i];
    const auto g = quantize(f, codec, 4);
    EXPECT_EQ(g.at(0, 0), 7);
    for (int k = 1; k < 4; ++k) EXPECT_EQ(g.at(0, k), 0);
}

TEST(Rvq, ZeroFeatureGivesZeroTokens) {
    const auto codec = small_codec();
    const auto g = quantize(FeatureSequence(3, 8), codec, 4);
    for (std::size_t t = 0; t < 3; ++t)
        for (int k = 0; k < 4; ++k) EXPECT_EQ(g.at(t, k), 0);
}

TEST(Rvq, MseNonIncreasingInLevel) {
    const auto codec = small_codec();
    const auto f = random_features(300, 8, 99);
    double prev = INFINITY;
    for (int k = 1; k <= 4; ++k) {
        const auto y = dequantize(quantize(f, codec, k), codec);
        double mse = 0;
        for (std::size_t t = 0; t < f.frames(); ++t) mse += sqdist(f.frame(t), y.frame(t));
        EXPECT_LE(mse, prev + 1e-12);
        prev = mse;
    }
}

TEST(Rvq, DequantizeEqualsFeatureMinusFinalResidual) {
    const auto codec = small_codec();
    const auto f = random_features(20, 8, 5);
    const auto g = quantize(f, codec, 3);
    const auto y = dequantize(g, codec);
    for (std::size_t t = 0; t < f.frames(); ++t) {
        // Residual tracked independently of quantize.
        std::vector<double> r(f.frame(t).begin(), f.frame(t).end());
        for (int k = 0; k < 3; ++k) {
            auto e = codec.codebooks[k].entry(g.at(t, k));
            for (int i = 0; i < 8; ++i) r[i] -= e[i];
        }
        for (int i = 0; i < 8; ++i) EXPECT_NEAR(y.frame(t)[i], f.frame(t)[i] - r[i], 1e-9);
    }
}

TEST(Rvq, PrefixConsistency) {
    const auto codec = small_codec();
    const auto f = random_features(10, 8, 6);
    const auto g = quantize(f, codec, 4);
    for (int k = 0; k < 4; ++k) {
        const auto a = dequantize(g, codec, std::vector<int>(10, k));
        const auto b = dequantize(g, codec, std::vector<int>(10, k + 1));
        for (std::size_t t = 0; t < 10; ++t) {
            auto e = codec.codebooks[k].entry(g.at(t, k));
            for (int i = 0; i < 8; ++i) EXPECT_NEAR(a.frame(t)[i], b.frame(t)[i] - e[i], 1e-9);
        }
    }
}

TEST(Rvq, ZeroDepthFrameIsZero) {
    const auto codec = small_codec();
    const auto g = quantize(random_features(2, 8, 8), codec, 4);
    const auto y = dequantize(g, codec, {0, 4});
    for (double v : y.frame(0)) EXPECT_EQ(v, 0.0);
}

TEST(Rvq, ResidualNormMonotonePerLayer) {
    const auto codec = small_codec();
    const auto f = random_features(200, 8, 12, 3.0);
    const auto g = quantize(f, codec, 4);
    for (std::size_t t = 0; t < f.frames(); ++t) {
        std::vector<double> r(f.frame(t).begin(), f.frame(t).end());
        double prev = 0;
        for (double v : r) prev += v * v;
        for (int k = 0; k < 4; ++k) {
            auto e = codec.codebooks[k].entry(g.at(t, k));
            double n = 0;
            for (int i = 0; i < 8; ++i) {
                r[i] -= e[i];
                n += r[i] * r[i];
            }
            EXPECT_LE(n, prev + 1e-9);
            prev = n;
        }
    }
}

TEST(Rvq, TrainOnVocabMinusOneVectorsIsExact) {
    RvqTrainConfig cfg;
    cfg.n_layers = 2;
    cfg.n_coarse = 1;
    cfg.vocab = 16;
    cfg.epochs = 10;
    const auto corpus = random_features(15, 4, 21);
    const auto codec = train_codebooks(corpus, cfg);
    const auto g = quantize(corpus, codec, 1);
    const auto y = dequantize(g, codec);
    for (std::size_t t = 0; t < corpus.frames(); ++t) EXPECT_LT(sqdist(corpus.frame(t), y.frame(t)), 1e-6);
}

TEST(Rvq, IdenticalCorpusConverges) {
    RvqTrainConfig cfg;
    cfg.n_layers = 2;
    cfg.n_coarse = 1;
    cfg.vocab = 4;
    cfg.epochs = 5;
    FeatureSequence corpus(50, 3);
    for (std::size_t t = 0; t < 50; ++t) {
        corpus.frame(t)[0] = 0.5;
        corpus.frame(t)[1] = -1.25;
        corpus.frame(t)[2] = 2.0;
    }
    const auto codec = train_codebooks(corpus, cfg);
    const auto y = dequantize(quantize(corpus, codec, 2), codec);
    EXPECT_LT(sqdist(corpus.frame(0), y.frame(0)), 1e-10);
}

TEST(Rvq, TrainingIsDeterministic) {
    const auto a = small_codec(5), b = small_codec(5);
    EXPECT_EQ(serialize_codec(a), serialize_codec(b));
}

TEST(Rvq, SerializeRoundTrip) {
    const auto a = small_codec();
    const auto bytes = serialize_codec(a);
    EXPECT_EQ(bytes.size(), 12u + 4u * 16 * 8 * 4);
    const auto b = deserialize_codec(bytes);
    EXPECT_EQ(serialize_codec(b), bytes);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_codec(bad), FormatError);
}

TEST(Rvq, Errors) {
    const auto codec = small_codec();
    EXPECT_THROW(quantize(FeatureSequence(2, 8), codec, 0), LevelError);
    EXPECT_THROW(quantize(FeatureSequence(2, 8), codec, 5), LevelError);
    EXPECT_THROW(quantize(FeatureSequence(2, 7), codec, 2), ShapeError);
    TokenGrid g(1, 4, 32, 4);
    g.at(0, 0) = 20;
    EXPECT_THROW(dequantize(g, codec), VocabularyError);
    RvqTrainConfig cfg;
    cfg.vocab = 64;
    EXPECT_THROW(train_codebooks(random_features(10, 4, 1), cfg), TrainingError);
}
