#include <gtest/gtest.h>

#include <soundspring/toy_codec.hpp>

#include "oracles.hpp"

using namespace soundspring;

namespace {

AudioSignal random_signal(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    AudioSignal a;
    a.samples.resize(n);
    for (auto& s : a.samples) s = rng.uniform() * 1.6 - 0.8;
    return a;
}

}  // namespace

TEST(ToyCodec, ImpulseGivesFirstDctColumn) {
    const auto c = oracle::dct_matrix(4);
    AudioSignal x{{1.0, 0.0, 0.0, 0.0}, 16000};
    const auto f = analyze(x, {4, 4});
    ASSERT_EQ(f.frames(), 1u);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(f.frame(0)[i], c[i][0], 1e-12);
}

TEST(ToyCodec, ZeroSignalGivesZeroFrames) {
    AudioSignal x{std::vector<double>(640, 0.0), 16000};
    const auto f = analyze(x, {});
    ASSERT_EQ(f.frames(), 2u);
    for (double v : f.data()) EXPECT_EQ(v, 0.0);
    const auto y = synthesize(f, {});
    for (double v : y.samples) EXPECT_EQ(v, 0.0);
}

TEST(ToyCodec, FullDimensionRoundTrip) {
    const CodecConfig cfg{320, 320};
    const auto x = random_signal(320 * 5, 3);
    const auto y = synthesize(analyze(x, cfg), cfg);
    ASSERT_EQ(y.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i], 1e-9);
}

TEST(ToyCodec, RampRoundTrip) {
    const CodecConfig cfg{8, 8};
    AudioSignal ramp;
    for (int i = 0; i < 8; ++i) ramp.samples.push_back(-0.7 + 0.2 * i);
    const auto back = synthesize(analyze(ramp, cfg), cfg);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(back.samples[i], ramp.samples[i], 1e-12);
}

TEST(ToyCodec, Parseval) {
    const CodecConfig cfg{320, 320};
    const auto x = random_signal(320 * 3, 9);
    const auto f = analyze(x, cfg);
    for (std::size_t t = 0; t < f.frames(); ++t) {
        double es = 0, ec = 0;
        for (int i = 0; i < 320; ++i) es += x.samples[t * 320 + i] * x.samples[t * 320 + i];
        for (double v : f.frame(t)) ec += v * v;
        EXPECT_NEAR(es, ec, 1e-9 * es);
    }
}

TEST(ToyCodec, Linearity) {
    const CodecConfig cfg{};
    const auto x = random_signal(640, 1), y = random_signal(640, 2);
    AudioSignal z;
    for (std::size_t i = 0; i < 640; ++i) z.samples.push_back(0.3 * x.samples[i] - 0.5 * y.samples[i]);
    const auto fx = analyze(x, cfg), fy = analyze(y, cfg), fz = analyze(z, cfg);
    for (std::size_t i = 0; i < fz.data().size(); ++i) {
        EXPECT_NEAR(fz.data()[i], 0.3 * fx.data()[i] - 0.5 * fy.data()[i], 1e-9);
    }
}

TEST(ToyCodec, HighToneOutsideKeptBandVanishes) {
    // A pure DCT basis vector above the kept band projects to nothing.
    const CodecConfig cfg{320, 64};
    const auto c = oracle::dct_matrix(320);
    AudioSignal x;
    for (int s = 0; s < 320; ++s) x.samples.push_back(0.5 * c[250][s]);
    const auto y = synthesize(analyze(x, cfg), cfg);
    double e = 0;
    for (double v : y.samples) e += v * v;
    EXPECT_LT(e, 1e-20);
}

TEST(ToyCodec, Errors) {
    EXPECT_THROW(analyze(AudioSignal{std::vector<double>(321, 0.0), 16000}, {}), LengthError);
    EXPECT_THROW(analyze(AudioSignal{{}, 16000}, {}), LengthError);
    EXPECT_THROW(analyze(AudioSignal{std::vector<double>(8, 0.0), 16000}, {4, 5}), ConfigError);
    FeatureSequence f(2, 10);
    EXPECT_THROW(synthesize(f, {}), ShapeError);
}

TEST(ToyCodec, OutputClamped) {
    const CodecConfig cfg{4, 4};
    FeatureSequence f(1, 4);
    f.frame(0)[0] = 10.0;
    for (double v : synthesize(f, cfg).samples) EXPECT_LE(std::abs(v), 1.0);
}

TEST(ToyCodec, PadToFrames) {
    AudioSignal a{std::vector<double>(321, 0.1), 16000};
    EXPECT_EQ(pad_to_frames(a, 320).size(), 640u);
    EXPECT_EQ(pad_to_frames(AudioSignal{}, 320).size(), 320u);
}
