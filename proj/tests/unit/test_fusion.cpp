#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fgpfe/checks.hpp"
#include "fgpfe/error.hpp"
#include "fgpfe/fusion.hpp"
#include "fgpfe/pipeline.hpp"

using namespace fgpfe;
using nd::Tensor;
using nd::Var;

namespace {

EncoderConfig enc8() {
    EncoderConfig e;
    e.c_p = 8;
    e.reduction = 2;
    e.conv_k = 3;
    return e;
}

Tensor rand_tensor(nd::Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-1, 1);
    return t;
}

BranchRows rows(std::vector<CellCoord> cells, Rng& rng, std::size_t c = 8) {
    const std::size_t n = cells.size();
    return {std::move(cells), Var::constant(rand_tensor({n, c}, rng))};
}

Tensor row_of(const Var& v, std::size_t i) { return nd::slice(v, 0, i, i + 1).value(); }

bool all_zero(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0; });
}

}  // namespace

TEST(Align, IdenticalCoordinatesAreIdentity) {
    Rng rng(1);
    const std::vector<CellCoord> cells{{0, 0}, {2, 1}, {3, 3}};
    const auto v = rows(cells, rng), t = rows(cells, rng), h = rows(cells, rng);
    const auto a = align_branches(v, t, h, 4, 4);
    EXPECT_EQ(a.cells, cells);
    EXPECT_TRUE(a.v.value() == v.feats.value());
    EXPECT_TRUE(a.t.value() == t.feats.value());
    EXPECT_TRUE(a.h.value() == h.feats.value());
}

TEST(Align, MissingRowIsZero) {
    Rng rng(2);
    const auto v = rows({{0, 0}, {1, 1}}, rng), t = rows({{0, 0}}, rng), h = rows({{0, 0}, {1, 1}}, rng);
    const auto a = align_branches(v, t, h, 4, 4);
    ASSERT_EQ(a.cells.size(), 2u);
    EXPECT_TRUE(all_zero(row_of(a.t, 1)));
    EXPECT_FALSE(all_zero(row_of(a.v, 1)));
}

TEST(Align, OutsideGridRejected) {
    Rng rng(3);
    EXPECT_THROW(align_branches(rows({{5, 0}}, rng), rows({}, rng), rows({}, rng), 4, 4), ShapeError);
}

TEST(Align, GatherBackReproducesOriginals) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::array<std::vector<CellCoord>, 3> sets;
        for (auto& s : sets) {
            for (int iy = 0; iy < 6; ++iy)
                for (int ix = 0; ix < 6; ++ix)
                    if (rng.below(3) == 0) s.push_back({ix, iy});
            std::sort(s.begin(), s.end());
        }
        const auto v = rows(sets[0], rng), t = rows(sets[1], rng), h = rows(sets[2], rng);
        const auto a = align_branches(v, t, h, 6, 6);
        EXPECT_GE(a.cells.size(), std::max({sets[0].size(), sets[1].size(), sets[2].size()}));
        const std::pair<const BranchRows*, const Var*> pairs[] = {{&v, &a.v}, {&t, &a.t}, {&h, &a.h}};
        for (auto [orig, aligned] : pairs) {
            std::vector<std::size_t> where;
            for (const auto& c : orig->cells)
                where.push_back(static_cast<std::size_t>(std::lower_bound(a.cells.begin(), a.cells.end(), c) - a.cells.begin()));
            EXPECT_TRUE(nd::gather_rows(*aligned, where).value() == orig->feats.value());
        }
    }
}

TEST(Apa, ZeroGateParametersHalveInput) {
    Rng rng(5);
    auto st = ApaState::make({4, 4}, enc8(), rng);
    st.u0.value().fill(0);
    st.u1.value().fill(0);
    const Tensor x = rand_tensor({5, 12}, rng);
    const Tensor g = channel_wise_attention(Var::constant(x), st).value();
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], 0.5 * x[i], 1e-15);

    // and the full module is psi(0.5 * concat(reduced branches))
    const Tensor v = rand_tensor({5, 8}, rng), t = rand_tensor({5, 8}, rng), h = rand_tensor({5, 8}, rng);
    const Var parts[] = {st.reduce_v(Var::constant(v)), st.reduce_t(Var::constant(t)), st.reduce_h(Var::constant(h))};
    const Tensor expect = st.psi(nd::scale(nd::concat(parts, 1), 0.5)).value();
    EXPECT_LT(nd::max_abs_diff(apa_forward(Var::constant(v), Var::constant(t), Var::constant(h), st).value(), expect),
              1e-14);
}

TEST(Apa, ZeroedBranchMatchesZeroedSlice) {
    Rng rng(6);
    const auto st = ApaState::make({4, 4}, enc8(), rng);
    const Tensor v = rand_tensor({4, 8}, rng), h = rand_tensor({4, 8}, rng);
    const Var zero_t = Var::constant(Tensor({4, 8}));
    const Tensor out = apa_forward(Var::constant(v), zero_t, Var::constant(h), st).value();
    // reduced slice of a zero branch is the reduce layer's bias
    const Var parts[] = {st.reduce_v(Var::constant(v)), st.reduce_t(zero_t), st.reduce_h(Var::constant(h))};
    const Var x = nd::concat(parts, 1);
    const Tensor expect = st.psi(channel_wise_attention(x, st)).value();
    EXPECT_TRUE(out == expect);
}

TEST(Apa, FusedMatchesGraph) {
    Rng rng(7);
    const auto st = ApaState::make({4, 4}, enc8(), rng);
    const Tensor v = rand_tensor({9, 8}, rng), t = rand_tensor({9, 8}, rng), h = rand_tensor({9, 8}, rng);
    EXPECT_TRUE(apa_encode(v, t, h, st) == apa_forward(Var::constant(v), Var::constant(t), Var::constant(h), st).value());
}

TEST(Apa, ConfigValidation) { EXPECT_THROW(validate(ApaConfig{40, 4}, 32), ConfigError); }

TEST(FullEncode, EmptySceneIsZero) {
    const GridSpec g = GridSpec::from_ranges({-4, 4}, {-4, 4}, {-5, 3}, {0.5, 0.5});
    const FgPfeModel m = FgPfeModel::init(enc8(), {4, 4}, {}, 1);
    const Tensor bev = full_encode({}, g, m);
    EXPECT_EQ(bev.shape(), (nd::Shape{16, 16, 8}));
    EXPECT_TRUE(all_zero(bev));
}

TEST(FullEncode, OnePillarOneCell) {
    const GridSpec g = GridSpec::from_ranges({-4, 4}, {-4, 4}, {-5, 3}, {0.5, 0.5});
    const FgPfeModel m = FgPfeModel::init(enc8(), {4, 4}, {}, 2);
    std::vector<Point> pts;
    for (int i = 0; i < 5; ++i) pts.push_back({1.1f + 0.05f * i, -2.2f, -4.0f + i, 0.1f * i, 0.09f * i});
    const auto out = encode_scene(pts, g, m);
    ASSERT_EQ(out.cells.size(), 1u);
    int nonzero = 0;
    for (std::size_t iy = 0; iy < 16; ++iy)
        for (std::size_t ix = 0; ix < 16; ++ix) {
            bool any = false;
            for (std::size_t c = 0; c < 8; ++c) any = any || out.bev.at({iy, ix, c}) != 0;
            nonzero += any;
            if (any) {
                EXPECT_EQ(static_cast<int>(ix), out.cells[0].ix);
                EXPECT_EQ(static_cast<int>(iy), out.cells[0].iy);
            }
        }
    EXPECT_EQ(nonzero, 1);
}

TEST(FullEncode, MatchesGraphPipeline) {
    RunConfig cfg;
    cfg.enc = enc8();
    cfg.apa = {4, 4};
    cfg.stv = {4, 4};
    const Scene s = grad_patch_scene(cfg.grid, 150, 9);
    const FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, 3);
    const auto fast = encode_scene(s.points, cfg.grid, m);
    const auto ps = prepare_scene(s.points, cfg.grid, cfg.stv);
    const auto b = encode_branches(ps, m);
    EXPECT_EQ(fast.cells, b.cells);
    EXPECT_TRUE(fast.pillar_features == apa_forward(b.v, b.t, b.h, m.apa).value());
}

TEST(FullEncode, DeterministicAcrossThreadCounts) {
    const GridSpec g = GridSpec::from_ranges({-10, 10}, {-10, 10}, {-5, 3}, {0.25, 0.25});
    SceneParams sp;
    sp.background_points = 3000;
    const Scene s = gen_scene(sp, {-10, 10, -10, 10, -5, 3});
    const FgPfeModel m = FgPfeModel::init(enc8(), {4, 4}, {}, 4);
    nd::set_num_threads(1);
    const Tensor a = full_encode(s.points, g, m);
    nd::set_num_threads(3);
    const Tensor b = full_encode(s.points, g, m);
    nd::set_num_threads(1);
    EXPECT_TRUE(a == b);
}

TEST(FullEncode, BevFileRoundTripsAsFloat32) {
    Rng rng(10);
    const Tensor bev = rand_tensor({3, 4, 2}, rng);
    const auto path = (std::filesystem::temp_directory_path() / "fgpfe_bev_test.bin").string();
    save_bev(bev, path);
    const Tensor back = load_bev(path);
    ASSERT_EQ(back.shape(), bev.shape());
    for (std::size_t i = 0; i < bev.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(bev[i])));
    std::filesystem::remove(path);
}
