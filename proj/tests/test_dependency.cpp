#include <gtest/gtest.h>

#include <soundspring/dependency.hpp>

using namespace soundspring;

namespace {

// Six frames, three units, key unit index 1, two coarse layers and three
// single-layer fine groups.
GosConfig fig_config() {
    GosConfig g;
    g.gos_len = 6;
    g.n_units = 3;
    g.fine_bounds = {0, 2, 3, 4, 5};
    g.key_unit = 1;
    return g;
}

std::uint32_t idx(const SliceGrid& sg, std::uint32_t g, std::uint16_t u, std::uint16_t j) {
    auto i = sg.find({g, u, j});
    EXPECT_TRUE(i.has_value());
    return static_cast<std::uint32_t>(i.value_or(0));
}

std::vector<std::uint32_t> sorted(std::vector<std::uint32_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

void mark_slice(TokenStateGrid& s, const SliceGrid& sg, std::uint32_t slice, TokenState st) {
    for (const Cell& c : sg.slices[slice].cells) s.at(c.t, c.k) = st;
}

}  // namespace

TEST(CodingDependency, KeySliceInstance) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const auto target = idx(sg, 0, 2, 3);
    const std::vector<std::uint32_t> want = sorted({idx(sg, 0, 0, 0), idx(sg, 0, 1, 0), idx(sg, 0, 2, 0),
                                                     idx(sg, 0, 1, 1), idx(sg, 0, 1, 2), idx(sg, 0, 1, 3)});
    EXPECT_EQ(dm.conditions[target], want);

    // Key slices see only coarse slices; coarse slices see nothing.
    EXPECT_EQ(dm.conditions[idx(sg, 0, 1, 2)], sorted({idx(sg, 0, 0, 0), idx(sg, 0, 1, 0), idx(sg, 0, 2, 0)}));
    for (std::uint16_t u = 0; u < 3; ++u) EXPECT_TRUE(dm.conditions[idx(sg, 0, u, 0)].empty());
    // Non-key group 1 picks up only the first key slice.
    EXPECT_EQ(dm.conditions[idx(sg, 0, 0, 1)].size(), 4u);
}

TEST(CodingDependency, AdjacencyExport) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto text = export_adjacency(sg, build_coding_dependency(sg));
    EXPECT_NE(text.find("S[0,3,3] <- S[0,1,0],S[0,2,0],S[0,2,1],S[0,2,2],S[0,2,3],S[0,3,0]\n"), std::string::npos);
    EXPECT_NE(text.find("S[0,1,0] <-\n"), std::string::npos);
}

TEST(CodingDependency, CoarseOnly) {
    const auto sg = build_slice_grid(12, 2, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    ASSERT_EQ(dm.size(), 6u);
    for (const auto& c : dm.conditions) EXPECT_TRUE(c.empty());
}

TEST(CodingDependency, NoCrossGosConditions) {
    const auto sg = build_slice_grid(20, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    for (std::size_t i = 0; i < dm.size(); ++i) {
        for (auto c : dm.conditions[i]) {
            EXPECT_EQ(sg.slices[c].id.gos, sg.slices[i].id.gos);
            EXPECT_NE(c, i);
        }
    }
}

TEST(CodingDependency, RandomConfigsAreOrderable) {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const int nq = rng.range(2, 8);
        const int nc = rng.range(1, nq - 1);
        GosConfig g;
        g.gos_len = rng.range(1, 24);
        g.n_units = rng.range(1, g.gos_len);
        g.key_unit = rng.range(0, g.n_units - 1);
        g.fine_bounds = default_fine_bounds(nq, nc, rng.range(1, nq - nc));
        const std::size_t T = rng.range(1, 80);
        std::vector<std::uint8_t> levels(T);
        for (auto& l : levels) l = static_cast<std::uint8_t>(rng.range(nc, nq));
        const auto mode = rng.below(2) ? SlicingMode::Periodic : SlicingMode::Streaming;
        StreamConfig sc{std::min(g.gos_len, 3), std::max(g.gos_len, 9), 9, rng.range(0, 4)};
        const auto sg = build_slice_grid(T, levels, g, mode);
        const auto dm = build_coding_dependency(sg, mode == SlicingMode::Streaming ? &sc : nullptr);

        auto check = [&](const std::vector<std::uint32_t>& order) {
            ASSERT_EQ(order.size(), sg.slices.size());
            std::vector<int> pos(order.size(), -1);
            for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);
            for (std::size_t i = 0; i < dm.size(); ++i) {
                ASSERT_GE(pos[i], 0);
                for (auto c : dm.conditions[i]) EXPECT_LT(pos[c], pos[i]);
            }
        };
        const auto topo = topological_order(dm);
        ASSERT_TRUE(topo.has_value());
        check(*topo);
        const auto emit = emission_order(sg, dm);
        check(emit);

        // Within a GoS: coarse first, then key slices before non-key slices of
        // equal or higher group.
        std::vector<int> pos(emit.size());
        for (std::size_t i = 0; i < emit.size(); ++i) pos[emit[i]] = static_cast<int>(i);
        for (std::size_t a = 0; a < sg.slices.size(); ++a) {
            for (std::size_t b = 0; b < sg.slices.size(); ++b) {
                const Slice& x = sg.slices[a];
                const Slice& y = sg.slices[b];
                if (x.id.gos != y.id.gos) continue;
                if (x.coarse() && !y.coarse()) {
                    EXPECT_LT(pos[a], pos[b]);
                }
                if (x.key && !y.key && !y.coarse() && y.id.group >= x.id.group) {
                    EXPECT_LT(pos[a], pos[b]);
                }
            }
        }
    }
}

TEST(CodingDependency, CycleIsDetected) {
    DependencyMatrix dm;
    dm.conditions = {{1}, {2}, {0}};
    EXPECT_FALSE(topological_order(dm).has_value());
    dm.conditions = {{}, {0}, {0, 1}};
    EXPECT_EQ(*topological_order(dm), (std::vector<std::uint32_t>{0, 1, 2}));
}

TEST(StreamingDependency, LookaheadBound) {
    GosConfig g;
    g.gos_len = 3;
    g.n_units = 3;
    g.fine_bounds = {0, 2, 5};
    const StreamConfig sc{3, 9, 9, 3};
    const auto sg = build_slice_grid(30, 5, g, SlicingMode::Streaming);
    const auto dm = build_coding_dependency(sg, &sc);
    int max_latency = 0;
    for (std::size_t i = 0; i < dm.size(); ++i) {
        const Slice& s = sg.slices[i];
        if (s.coarse()) continue;
        const std::uint32_t t = s.frames.front();
        const std::uint32_t b0 = sg.gos_spans[s.id.gos].first;
        for (auto c : dm.conditions[i]) {
            for (auto f : sg.slices[c].frames) {
                EXPECT_LE(f, t + 3u);
                max_latency = std::max<int>(max_latency, static_cast<int>(f - b0) + 1);
            }
        }
        // The frame's own coarse slice is always a condition.
        EXPECT_TRUE(std::binary_search(dm.conditions[i].begin(), dm.conditions[i].end(),
                                       static_cast<std::uint32_t>(sg.slice_of(t, 0))));
    }
    EXPECT_EQ(max_latency, 6);
}

TEST(StreamingDependency, ZeroLookahead) {
    GosConfig g;
    g.gos_len = 3;
    g.n_units = 3;
    g.fine_bounds = {0, 1, 3};
    const StreamConfig sc{3, 9, 9, 0};
    const auto sg = build_slice_grid(12, 3, g, SlicingMode::Streaming);
    const auto dm = build_coding_dependency(sg, &sc);
    for (std::size_t i = 0; i < dm.size(); ++i) {
        for (auto c : dm.conditions[i]) EXPECT_LE(sg.slices[c].frames.front(), sg.slices[i].frames.front());
    }
}

TEST(ConcealWindows, PlacementAndChunking) {
    TokenStateGrid st(30, 3, TokenState::R);
    const std::vector<std::uint8_t> levels(30, 3);
    EXPECT_TRUE(build_conceal_windows(st, levels, 9).empty());

    st.at(10, 2) = TokenState::L;
    auto w = build_conceal_windows(st, levels, 9);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].core_lo, 10u);
    EXPECT_EQ(w[0].core_hi, 11u);
    EXPECT_EQ(w[0].lo, 6u);
    EXPECT_EQ(w[0].hi, 15u);

    st.at(10, 2) = TokenState::R;
    st.at(0, 0) = TokenState::L;
    w = build_conceal_windows(st, levels, 9);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].lo, 0u);
    EXPECT_EQ(w[0].hi, 9u);

    for (int t = 5; t < 25; ++t) st.at(t, 1) = TokenState::I;
    w = build_conceal_windows(st, levels, 9);
    std::uint32_t covered = 0;
    for (const auto& x : w) {
        EXPECT_LE(x.length(), 9u);
        EXPECT_LE(x.core_hi - x.core_lo, 7u);
        EXPECT_LE(x.lo, x.core_lo);
        EXPECT_GE(x.hi, x.core_hi);
        covered += x.core_hi - x.core_lo;
    }
    EXPECT_EQ(covered, 21u);
    EXPECT_THROW(build_conceal_windows(st, levels, 0), WindowError);
}

TEST(ClassifyLoss, NothingLost) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const TokenStateGrid st(6, 5, TokenState::R);
    const std::vector<std::uint8_t> levels(6, 5);
    EXPECT_TRUE(classify_loss(st, {0, 6, 0, 6}, sg, dm, levels, {}).empty());
}

TEST(ClassifyLoss, CoarseSliceLost) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const std::vector<std::uint8_t> levels(6, 5);
    TokenStateGrid st(6, 5, TokenState::R);
    mark_slice(st, sg, idx(sg, 0, 0, 0), TokenState::L);
    // Every fine slice of the GoS needs that coarse slice.
    for (std::size_t i = 0; i < sg.slices.size(); ++i)
        if (!sg.slices[i].coarse()) mark_slice(st, sg, static_cast<std::uint32_t>(i), TokenState::I);

    const auto targets = classify_loss(st, {0, 6, 0, 6}, sg, dm, levels, {});
    std::vector<Cell> case1;
    for (const auto& tg : targets) {
        if (tg.loss_case == LossCase::Case1) {
            case1.push_back(tg.cell);
        } else {
            // Frames 1, 2, 4, 5 keep their coarse tokens; their fine cells
            // were invalidated by the lost coarse condition.
            EXPECT_EQ(tg.loss_case, LossCase::Case2);
            EXPECT_NE(tg.cell.t % 3, 0u);
            EXPECT_TRUE(tg.cell.k == 2 || tg.cell.k == 3);
        }
    }
    EXPECT_EQ(case1, (std::vector<Cell>{{0, 0}, {0, 1}, {3, 0}, {3, 1}}));
    EXPECT_EQ(targets.size(), 4u + 4 * 2);
}

TEST(ClassifyLoss, KeySliceLost) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const std::vector<std::uint8_t> levels(6, 5);
    TokenStateGrid st(6, 5, TokenState::R);
    // S_{l*,1} lost: its cells are L, everything above in those frames is I,
    // and all non-key fine slices are undecodable.
    mark_slice(st, sg, idx(sg, 0, 1, 1), TokenState::L);
    mark_slice(st, sg, idx(sg, 0, 1, 2), TokenState::I);
    mark_slice(st, sg, idx(sg, 0, 1, 3), TokenState::I);
    for (std::uint16_t u : {0, 2})
        for (std::uint16_t j = 1; j <= 3; ++j) mark_slice(st, sg, idx(sg, 0, u, j), TokenState::I);

    ConcealConfig cfg;
    cfg.conceal_fine_layers = 2;
    const auto targets = classify_loss(st, {0, 6, 0, 6}, sg, dm, levels, cfg);
    std::vector<ConcealTarget> want;
    for (std::uint32_t t = 0; t < 6; ++t) {
        if (t % 3 == 1) {
            want.push_back({{t, 2}, LossCase::Case3});
        } else {
            want.push_back({{t, 2}, LossCase::Case4});
            want.push_back({{t, 3}, LossCase::Case4});
        }
    }
    ASSERT_EQ(targets.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(targets[i].cell, want[i].cell);
        EXPECT_EQ(targets[i].loss_case, want[i].loss_case);
    }
}

TEST(ClassifyLoss, NonKeyFineLost) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const std::vector<std::uint8_t> levels(6, 5);
    TokenStateGrid st(6, 5, TokenState::R);
    mark_slice(st, sg, idx(sg, 0, 2, 2), TokenState::L);
    mark_slice(st, sg, idx(sg, 0, 2, 3), TokenState::I);
    const auto targets = classify_loss(st, {0, 6, 0, 6}, sg, dm, levels, {});
    ASSERT_EQ(targets.size(), 2u);
    for (const auto& tg : targets) {
        EXPECT_EQ(tg.loss_case, LossCase::Case3);
        EXPECT_EQ(tg.cell.k, 3);
        EXPECT_EQ(tg.cell.t % 3, 2u);
    }
}

TEST(ClassifyLoss, WindowTooLong) {
    const auto sg = build_slice_grid(12, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const TokenStateGrid st(12, 5, TokenState::R);
    const std::vector<std::uint8_t> levels(12, 5);
    ConcealConfig cfg;
    cfg.window = 9;
    EXPECT_THROW(classify_loss(st, {0, 10, 0, 10}, sg, dm, levels, cfg), WindowError);
    EXPECT_NO_THROW(classify_loss(st, {0, 9, 2, 5}, sg, dm, levels, cfg));
}

TEST(ConcealMask, CoarseTargetUsesCoarseOnly) {
    TokenStateGrid st(5, 4, TokenState::R);
    st.at(2, 0) = TokenState::L;
    st.at(2, 1) = TokenState::L;
    for (int k = 2; k < 4; ++k) st.at(2, k) = TokenState::I;
    const ConcealmentWindow w{0, 5, 2, 3};
    const auto mask = build_conceal_mask({{{2, 0}, LossCase::Case1}, {{2, 1}, LossCase::Case1}}, st, w);
    EXPECT_EQ(mask.masked, (std::vector<Cell>{{2, 0}, {2, 1}}));
    std::vector<Cell> want;
    for (std::uint32_t t : {0u, 1u, 3u, 4u})
        for (std::uint16_t k : {0, 1}) want.push_back({t, k});
    std::sort(want.begin(), want.end());
    auto got = mask.conditions;
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, want);
}

TEST(ConcealMask, EmptyTargets) {
    const TokenStateGrid st(3, 2, TokenState::R);
    const auto mask = build_conceal_mask({}, st, {0, 3, 0, 3});
    EXPECT_TRUE(mask.masked.empty());
    EXPECT_TRUE(mask.conditions.empty());
}

TEST(ConcealMask, LayerCausalForFineTarget) {
    TokenStateGrid st(5, 5, TokenState::R);
    st.at(2, 3) = TokenState::L;
    st.at(2, 4) = TokenState::I;
    const auto mask = build_conceal_mask({{{2, 3}, LossCase::Case3}}, st, {0, 5, 2, 3});
    EXPECT_EQ(mask.masked, (std::vector<Cell>{{2, 3}}));
    for (const Cell& c : mask.conditions) {
        if (c.t == 2) {
            EXPECT_LT(c.k, 3);
        } else {
            EXPECT_LE(c.k, 3);
        }
    }
    EXPECT_EQ(mask.conditions.size(), 3u + 4 * 4);
}

TEST(ConcealMask, UsableDepthLimitsConditions) {
    TokenStateGrid st(3, 4, TokenState::R);
    st.at(0, 1) = TokenState::I;  // frame 0 usable only at layer 0
    st.at(1, 2) = TokenState::L;
    const auto mask = build_conceal_mask({{{1, 2}, LossCase::Case3}}, st, {0, 3, 1, 2});
    for (const Cell& c : mask.conditions) EXPECT_FALSE(c.t == 0 && c.k > 0);
    EXPECT_NE(std::find(mask.masked.begin(), mask.masked.end(), Cell{0, 1}), mask.masked.end());
}

TEST(ClassifyLoss, Deterministic) {
    const auto sg = build_slice_grid(6, 5, fig_config(), SlicingMode::Periodic);
    const auto dm = build_coding_dependency(sg);
    const std::vector<std::uint8_t> levels(6, 5);
    TokenStateGrid st(6, 5, TokenState::R);
    mark_slice(st, sg, idx(sg, 0, 0, 2), TokenState::L);
    const auto a = classify_loss(st, {0, 6, 0, 6}, sg, dm, levels, {});
    const auto b = classify_loss(st, {0, 6, 0, 6}, sg, dm, levels, {});
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].cell, b[i].cell);
}
