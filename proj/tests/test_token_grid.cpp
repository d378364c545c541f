#include <gtest/gtest.h>

#include <soundspring/io.hpp>
#include <soundspring/token_grid.hpp>

#include "oracles.hpp"

using namespace soundspring;

namespace {

std::set<int> to_1based(const std::vector<int>& v) {
    std::set<int> s;
    for (int x : v) s.insert(x + 1);
    return s;
}

GosConfig gos(int len, int units, std::vector<int> bounds, int key = 0) {
    GosConfig g;
    g.gos_len = len;
    g.n_units = units;
    g.fine_bounds = std::move(bounds);
    g.key_unit = key;
    return g;
}

}  // namespace

TEST(PeriodicSlicing, SixThree) {
    const auto g = periodic_slicing(6, 3);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(to_1based(g[0]), (std::set<int>{1, 4}));
    EXPECT_EQ(to_1based(g[1]), (std::set<int>{2, 5}));
    EXPECT_EQ(to_1based(g[2]), (std::set<int>{3, 6}));
}

TEST(PeriodicSlicing, MatchesDirectSubstitution) {
    for (int tg : {1, 5, 6, 17, 150}) {
        for (int s = 1; s <= std::min(tg, 12); ++s) {
            const auto want = oracle::periodic_groups_1based(tg, s);
            const auto got = periodic_slicing(tg, s);
            ASSERT_EQ(got.size(), want.size());
            for (int l = 0; l < s; ++l) EXPECT_EQ(to_1based(got[l]), want[l]);
        }
    }
}

TEST(PeriodicSlicing, OneSecondGosShape) {
    const auto g = periodic_slicing(150, 10);
    ASSERT_EQ(g.size(), 10u);
    for (const auto& u : g) {
        ASSERT_EQ(u.size(), 15u);
        for (std::size_t i = 1; i < u.size(); ++i) EXPECT_EQ(u[i] - u[i - 1], 10);
    }
}

TEST(PeriodicSlicing, SingleUnitAndErrors) {
    const auto g = periodic_slicing(7, 1);
    EXPECT_EQ(g[0].size(), 7u);
    EXPECT_THROW(periodic_slicing(3, 4), ConfigError);
    EXPECT_THROW(periodic_slicing(3, 0), ConfigError);
}

TEST(StreamingSlicing, Singletons) {
    EXPECT_EQ(streaming_slicing(1).size(), 1u);
    const auto g = streaming_slicing(5);
    ASSERT_EQ(g.size(), 5u);
    for (int t = 0; t < 5; ++t) EXPECT_EQ(g[t], std::vector<int>{t});
}

TEST(SliceGrid, HandEnumeratedSixSlices) {
    const auto sg = build_slice_grid(4, 4, gos(4, 2, {0, 1, 2, 4}), SlicingMode::Periodic);
    ASSERT_EQ(sg.slices.size(), 6u);
    auto cells = [&](std::uint16_t u, std::uint16_t j) { return sg.slices[*sg.find({0, u, j})].cells; };
    using V = std::vector<Cell>;
    EXPECT_EQ(cells(0, 0), (V{{0, 0}, {2, 0}}));
    EXPECT_EQ(cells(0, 1), (V{{0, 1}, {2, 1}}));
    EXPECT_EQ(cells(0, 2), (V{{0, 2}, {0, 3}, {2, 2}, {2, 3}}));
    EXPECT_EQ(cells(1, 0), (V{{1, 0}, {3, 0}}));
    EXPECT_EQ(cells(1, 1), (V{{1, 1}, {3, 1}}));
    EXPECT_EQ(cells(1, 2), (V{{1, 2}, {1, 3}, {3, 2}, {3, 3}}));
    EXPECT_TRUE(sg.slices[*sg.find({0, 0, 1})].key);
    EXPECT_FALSE(sg.slices[*sg.find({0, 1, 1})].key);
    EXPECT_FALSE(sg.slices[*sg.find({0, 0, 0})].key);
}

TEST(SliceGrid, CoarseOnlyLevel) {
    const auto sg = build_slice_grid(10, 2, gos(5, 5, {0, 2, 4, 6}), SlicingMode::Periodic);
    for (const auto& s : sg.slices) EXPECT_TRUE(s.coarse());
}

TEST(SliceGrid, TruncatesAboveLevel) {
    const auto sg = build_slice_grid(4, 3, gos(4, 2, {0, 1, 2, 4}), SlicingMode::Periodic);
    const auto& s = sg.slices[*sg.find({0, 0, 2})];
    EXPECT_EQ(s.cells, (std::vector<Cell>{{0, 2}, {2, 2}}));
}

TEST(SliceGrid, TailGosAndPartition) {
    const auto g = gos(6, 4, {0, 2, 3, 5}, 1);
    std::vector<std::uint8_t> levels{5, 5, 3, 4, 5, 2, 5, 3, 4};
    const auto sg = build_slice_grid(levels.size(), levels, g, SlicingMode::Periodic);
    EXPECT_EQ(sg.gos_spans.size(), 2u);
    EXPECT_EQ(sg.gos_spans[1].len, 3u);
    EXPECT_FALSE(validate_partition(sg, levels).has_value());
    for (const auto& s : sg.slices) {
        for (std::size_t i = 1; i < s.frames.size(); ++i) EXPECT_EQ((s.frames[i] - s.frames[i - 1]) % 4, 0u);
    }
    // Tail GoS of 3 frames has no unit 3 (offset 3 is beyond its length).
    EXPECT_FALSE(sg.find({1, 3, 0}).has_value());
}

TEST(SliceGrid, RandomConfigsPartition) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int nq = rng.range(2, 8);
        const int nc = rng.range(1, nq - 1);
        const int groups = rng.range(1, nq - nc);
        const int tg = rng.range(1, 20);
        const int s = rng.range(1, tg);
        const auto g = gos(tg, s, default_fine_bounds(nq, nc, groups), rng.range(0, s - 1));
        const std::size_t T = rng.range(1, 60);
        std::vector<std::uint8_t> levels(T);
        for (auto& l : levels) l = static_cast<std::uint8_t>(rng.range(nc, nq));
        for (auto mode : {SlicingMode::Periodic, SlicingMode::Streaming}) {
            const auto sg = build_slice_grid(T, levels, g, mode);
            EXPECT_FALSE(validate_partition(sg, levels).has_value());
        }
    }
}

TEST(SliceGrid, ViolationsAreReported) {
    const std::vector<std::uint8_t> levels(4, 4);
    auto sg = build_slice_grid(4, levels, gos(4, 2, {0, 1, 2, 4}), SlicingMode::Periodic);
    auto dup = sg;
    dup.slices[1].cells.push_back({0, 0});
    auto v = validate_partition(dup, levels);
    ASSERT_TRUE(v.has_value());
    EXPECT_EQ(v->kind, PartitionViolation::Kind::Disjointness);
    EXPECT_EQ(v->cell, (Cell{0, 0}));

    auto drop = sg;
    drop.slices[2].cells.pop_back();
    drop.cell_slice[2 * 4 + 3] = -1;
    v = validate_partition(drop, levels);
    ASSERT_TRUE(v.has_value());
    EXPECT_EQ(v->kind, PartitionViolation::Kind::Totality);
    EXPECT_EQ(v->cell, (Cell{2, 3}));
}

TEST(SliceGrid, Errors) {
    EXPECT_THROW(build_slice_grid(4, 0, gos(4, 2, {0, 1, 2, 4}), SlicingMode::Periodic), LevelError);
    EXPECT_THROW(build_slice_grid(4, 4, gos(4, 5, {0, 1, 2, 4}), SlicingMode::Periodic), ConfigError);
    EXPECT_THROW(build_slice_grid(4, 4, gos(4, 2, {0, 2, 2, 4}), SlicingMode::Periodic), ConfigError);
}

TEST(StreamConfig, Validation) {
    EXPECT_NO_THROW(StreamConfig{}.validate());
    EXPECT_THROW((StreamConfig{0, 9, 9, 3}.validate()), ConfigError);
    EXPECT_THROW((StreamConfig{3, 2, 9, 3}.validate()), ConfigError);
    EXPECT_THROW((StreamConfig{3, 9, 2, 3}.validate()), ConfigError);
    EXPECT_THROW((StreamConfig{3, 9, 9, -1}.validate()), ConfigError);
}

TEST(TokenStateGrid, ValidDepth) {
    TokenStateGrid s(1, 5, TokenState::I);
    s.at(0, 0) = TokenState::R;
    s.at(0, 1) = TokenState::C;
    s.at(0, 3) = TokenState::R;
    EXPECT_EQ(s.valid_depth(0), 2);
    EXPECT_EQ(s.row_string(0), "RCIRI");
}

TEST(TokenGridFile, RoundTrip) {
    TokenGrid g(3, 4, 1024, 4);
    g.set_level(1, 2);
    for (std::size_t t = 0; t < 3; ++t)
        for (int k = 0; k < g.level(t); ++k) g.at(t, k) = static_cast<std::uint16_t>(t * 100 + k);
    const auto bytes = serialize_grid(g);
    EXPECT_EQ(bytes.size(), 4u + 4 + 2 + 2 + 3 + 3 * 4 * 2);
    EXPECT_EQ(deserialize_grid(bytes), g);
}
