// Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero
// when any selected criterion fails. Usage: fgpfe_acceptance [N ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fgpfe/bench.hpp"
#include "fgpfe/checks.hpp"
#include "fgpfe/pipeline.hpp"
#include "fgpfe/runconfig.hpp"
#include "fgpfe/train.hpp"
#include "oracles.hpp"

using namespace fgpfe;
using nd::Tensor;
using nd::Var;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool all_zero(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// 1. group_pool against the hash-map grouper on 50 scenes.
Outcome grid_oracle() {
    Stopwatch sw;
    const GridSpec grid;
    const StvSpec stv;
    const FeatureFn fn = [](const Point& p, const GroupContext& c, std::span<double> out) {
        out[0] = p.x - c.mean[0];
        out[1] = p.y - c.mean[1];
        out[2] = p.z - c.mean[2];
        out[3] = p.x - c.center_x;
        out[4] = p.y - c.center_y;
        out[5] = p.r * p.dt + static_cast<double>(c.bin);
        out[6] = std::sin(p.x * 3.0) * p.z;
    };
    Rng rng(2024);
    std::size_t mismatches = 0, groups = 0;
    for (int scene = 0; scene < 50; ++scene) {
        const std::size_t n = 1 + rng.below(10000);
        const double half = rng.uniform(0.5, 20.0);
        const double cx = rng.uniform(-50, 50), cy = rng.uniform(-50, 50);
        std::vector<Point> pts;
        for (std::size_t i = 0; i < n; ++i) {
            Point p;
            p.x = static_cast<float>(cx + rng.uniform(-half, half));
            p.y = static_cast<float>(cy + rng.uniform(-half, half));
            p.z = static_cast<float>(rng.uniform(-5.5, 3.5));
            p.r = static_cast<float>(rng.unit());
            p.dt = static_cast<float>(rng.uniform(0.0, 0.5));
            pts.push_back(p);
        }
        for (std::size_t i = 0; i < n / 20; ++i) pts.push_back(pts[rng.below(pts.size())]);
        std::size_t n_cells[4] = {};
        int k = 0;
        for (auto key : {GroupKey::pillar, GroupKey::pillar_vertical, GroupKey::pillar_temporal, GroupKey::shifted_pillar}) {
            for (auto mode : {nd::ReduceMode::mean, nd::ReduceMode::max}) {
                const auto got = group_pool(pts, grid, stv, key, mode, 7, fn);
                const auto ref = oracle::group(pts, grid, stv, key, mode == nd::ReduceMode::max, 7, fn);
                const bool same = got.cells == ref.cells && got.feats.to_vector() == ref.feats &&
                                  got.mask.to_vector() == ref.mask;
                mismatches += !same;
                n_cells[k] = got.cells.size();
                groups += ref.cells.size();
                if (got.cells.size() != ref.cells.size()) ++mismatches;
            }
            ++k;
        }
        // N_vp and N_tp count pillars holding at least one in-range point
        if (n_cells[1] != n_cells[0] || n_cells[2] != n_cells[0]) ++mismatches;
    }
    const double t = sw.seconds();
    return {mismatches == 0 && t < 30.0,
            fmt("%zu mismatching groupings over 50 scenes (%zu cells compared), %.1f s", mismatches, groups, t)};
}

RunConfig small_config() {
    RunConfig cfg;
    cfg.enc.c_p = 8;
    cfg.enc.reduction = 2;
    cfg.apa.c_f = 4;
    cfg.stv = {4, 4};
    return cfg;
}

// 2. finite-difference check of every layer and full graph.
Outcome gradient_fidelity() {
    Stopwatch sw;
    const RunConfig cfg = small_config();
    const Scene patch = grad_patch_scene(cfg.grid, 96, 7);
    const auto ps = prepare_scene(patch.points, cfg.grid, cfg.stv);
    nd::GradCheckOptions o;
    o.step = 1e-5;
    o.tolerance = 1e-5;
    double worst = 0;
    std::string failed;
    std::size_t n = 0;
    for (const auto& r : run_gradient_suite(cfg, o, 6)) {
        worst = std::max(worst, r.max_rel_error);
        if (!r.passed) failed += " " + r.name;
        ++n;
    }
    const double t = sw.seconds();
    return {failed.empty() && worst < 1e-5 && t < 120 && ps.pillar.n_cells() <= 32,
            fmt("%zu graphs, %zu pillars, max rel err %.2e, %.1f s%s%s", n, ps.pillar.n_cells(), worst, t,
                failed.empty() ? "" : ", failed:", failed.c_str())};
}

// 3. zero attention parameters.
Outcome zero_parameters() {
    const RunConfig cfg;
    const Scene s = gen_scene(cfg.scene);
    const auto ps = prepare_scene(s.points, cfg.grid, cfg.stv);
    FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, 3);
    m.vpfe.w0.value().fill(0);
    m.vpfe.w1.value().fill(0);
    m.vpfe.conv.value().fill(0);
    m.apa.u0.value().fill(0);
    m.apa.u1.value().fill(0);
    const Var p = pool_bins(augment(ps.table, ps.vertical, ps.grid), ps.vertical, m.vpfe.lift);
    const Tensor mask = ps.vertical.mask();
    const Tensor out = vgam(p, mask, m.vpfe).value();
    const std::size_t c = cfg.enc.c_p;
    double err_v = 0;
    for (std::size_t i = 0; i < out.size(); ++i) err_v = std::max(err_v, std::abs(out[i] - 0.25 * p.value()[i] * mask[i / c]));
    const auto b = encode_branches(ps, m);
    const Var parts[] = {m.apa.reduce_v(b.v), m.apa.reduce_t(b.t), m.apa.reduce_h(b.h)};
    const Var x = nd::concat(parts, 1);
    const Tensor gate = channel_wise_attention(x, m.apa).value();
    double err_a = 0;
    for (std::size_t i = 0; i < gate.size(); ++i) err_a = std::max(err_a, std::abs(gate[i] - 0.5 * x.value()[i]));
    return {err_v < 1e-12 && err_a < 1e-12,
            fmt("VGAM max |out - 0.25 P| = %.2e over %zu pillars, APA max |gate - 0.5 x| = %.2e", err_v,
                ps.vertical.n_cells(), err_a)};
}

// 4. vpfe_forward against the straight-line reference.
Outcome dual_implementation() {
    const RunConfig cfg;
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SceneParams sp = cfg.scene;
        sp.seed = seed;
        sp.background_points = 500;
        const Scene s = gen_scene(sp);
        const auto ps = prepare_scene(s.points, cfg.grid, cfg.stv);
        const FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, 100 + seed);
        const Var p = pool_bins(augment(ps.table, ps.vertical, ps.grid), ps.vertical, m.vpfe.lift);
        const Tensor mask = ps.vertical.mask();
        const Tensor got = vpfe_forward(p, mask, m.vpfe).value();
        const auto ref = oracle::vpfe(p.value().to_vector(), mask.to_vector(), p.dim(0), p.dim(1), p.dim(2), m.vpfe);
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
    }
    return {worst < 1e-10, fmt("max |diff| %.2e over 20 seeds", worst)};
}

// 5. shuffle, pillar permutation and duplication.
Outcome invariance() {
    const RunConfig cfg;
    std::size_t shuffle_fail = 0, pillar_fail = 0;
    double dup_worst = 0;
    Stopwatch sw;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 7919);
        SceneParams sp = cfg.scene;
        sp.seed = seed;
        const Scene s = gen_scene(sp);
        const FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, seed);
        const EncodeOutput base = encode_scene(s.points, cfg.grid, m);

        auto shuffled = s.points;
        shuffle(shuffled, rng);
        shuffle_fail += !(full_encode(shuffled, cfg.grid, m) == base.bev);

        // points regrouped pillar by pillar, pillars in random order
        const auto idx = quantize(s.points, cfg.grid, cfg.stv);
        std::vector<std::size_t> order(s.points.size());
        std::iota(order.begin(), order.end(), 0);
        std::vector<std::uint64_t> pillar_rank(static_cast<std::size_t>(cfg.grid.n_x) * cfg.grid.n_y);
        for (auto& r : pillar_rank) r = 0;
        std::set<std::size_t> seen;
        for (const auto& q : idx)
            if (q.in_range) seen.insert(static_cast<std::size_t>(q.iy) * cfg.grid.n_x + q.ix);
        for (auto cell : seen) pillar_rank[cell] = rng.next();
        auto rank_of = [&](std::size_t i) {
            return idx[i].in_range ? pillar_rank[static_cast<std::size_t>(idx[i].iy) * cfg.grid.n_x + idx[i].ix] : 0;
        };
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rank_of(a) < rank_of(b); });
        std::vector<Point> by_pillar;
        for (auto i : order) by_pillar.push_back(s.points[i]);
        bool ok = full_encode(by_pillar, cfg.grid, m) == base.bev;

        // fusion applied to pillar rows in permuted order, written back cell by cell
        const auto ps = prepare_scene(s.points, cfg.grid, cfg.stv);
        const auto br = encode_branches(ps, m);
        std::vector<std::size_t> perm(br.cells.size());
        std::iota(perm.begin(), perm.end(), 0);
        shuffle(perm, rng);
        const Tensor rows = apa_forward(nd::gather_rows(br.v, perm), nd::gather_rows(br.t, perm),
                                        nd::gather_rows(br.h, perm), m.apa).value();
        const std::size_t c = cfg.enc.c_p;
        Tensor bev({static_cast<std::size_t>(cfg.grid.n_y), static_cast<std::size_t>(cfg.grid.n_x), c});
        for (std::size_t r = 0; r < perm.size(); ++r) {
            const auto cell = br.cells[perm[r]];
            for (std::size_t k = 0; k < c; ++k) bev.at({std::size_t(cell.iy), std::size_t(cell.ix), k}) = rows[r * c + k];
        }
        ok = ok && bev == base.bev;
        pillar_fail += !ok;

        auto doubled = s.points;
        doubled.insert(doubled.end(), s.points.begin(), s.points.end());
        dup_worst = std::max(dup_worst, nd::max_abs_diff(full_encode(doubled, cfg.grid, m), base.bev));
    }
    return {shuffle_fail == 0 && pillar_fail == 0 && dup_worst < 1e-12,
            fmt("20 seeds: shuffle mismatches %zu, pillar-permutation mismatches %zu, duplication max |diff| %.2e, %.1f s",
                shuffle_fail, pillar_fail, dup_worst, sw.seconds())};
}

// 6. labels against the rasterizer.
Outcome label_oracle() {
    const GridSpec g = GridSpec::from_ranges({-20, 20}, {-20, 20}, {-5, 3}, {0.2, 0.2});
    std::vector<CellCoord> cells;
    for (int ix = 0; ix < g.n_x; ++ix)
        for (int iy = 0; iy < g.n_y; ++iy) cells.push_back({ix, iy});
    Rng rng(606);
    std::size_t bad_sets = 0, positives = 0;
    for (int set = 0; set < 100; ++set) {
        std::vector<Box3D> boxes(rng.below(9));
        for (auto& b : boxes) {
            b.cx = rng.uniform(-22, 22);
            b.cy = rng.uniform(-22, 22);
            b.l = rng.uniform(0.3, 8);
            b.w = rng.uniform(0.3, 4);
            b.h = 1.5;
            b.yaw = rng.below(4) == 0 ? 0.0 : rng.uniform(-M_PI, M_PI);
        }
        const auto labels = make_labels(cells, g, boxes);
        const auto raster = oracle::rasterize(g, boxes);
        bool same = true;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            same = same && labels[i] == raster[static_cast<std::size_t>(cells[i].iy) * g.n_x + cells[i].ix];
            positives += labels[i];
        }
        bad_sets += !same;
    }
    return {bad_sets == 0, fmt("%zu of 100 box sets differ (%zu positive cells checked)", bad_sets, positives)};
}

// 7. toy overfit.
Outcome overfit() {
    RunConfig cfg;
    cfg.training.steps = 500;
    cfg.training.lr = 0.01;
    SceneParams sp;
    sp.seed = 1;
    sp.n_boxes = 5;
    sp.points_per_box = 200;
    sp.background_points = 2000;
    sp.sweeps = 3;
    const Scene s = gen_scene(sp);
    FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, cfg.training.seed);
    const TrainResult r = train_toy(s, cfg, m);
    const double ratio = r.final_loss / r.initial_loss;
    return {ratio < 0.1 && r.auc > 0.9 && r.seconds < 300,
            fmt("L_op %.5f -> %.5f (ratio %.3f, need < 0.1), ROC-AUC %.4f (need > 0.9), %zu pillars, %.1f s",
                r.initial_loss, r.final_loss, ratio, r.auc, r.n_pillars, r.seconds)};
}

// 8. throughput.
Outcome throughput() {
    RunConfig cfg;
    cfg.threads = 1;
    nd::set_num_threads(1);
    const Scene s = bench_scene(300000, 1);
    const FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, 1);
    const BenchReport r = run_bench(s, cfg, m, 3);
    const double share = (r.mean.quantize + r.mean.group) / r.total_mean;
    return {r.total_mean < 2.0 && share < 0.25,
            fmt("300k points, C_p=%zu, 1 thread: full_encode %.3f s (cv %.1f%%), quantize+group %.1f%% of total",
                cfg.enc.c_p, r.total_mean, 100 * r.total_cv, 100 * share)};
}

// 9. degenerate scenes.
Outcome degenerate() {
    const RunConfig cfg;
    const FgPfeModel m = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, 9);
    std::string detail;
    bool ok = true;

    const auto empty = encode_scene({}, cfg.grid, m);
    const bool empty_ok = empty.cells.empty() && all_zero(empty.bev) &&
                          empty.bev.shape() == nd::Shape{1440, 1440, cfg.enc.c_p};
    ok = ok && empty_ok;
    detail += empty_ok ? "empty: all zero" : "empty: WRONG";

    const std::vector<Point> one{{3.3f, -7.1f, -0.5f, 0.4f, 0.2f}};
    const auto single = encode_scene(one, cfg.grid, m);
    const auto q = quantize_point(one[0], cfg.grid, cfg.stv);
    std::size_t nonzero = 0;
    bool at_cell = false;
    const std::size_t c = cfg.enc.c_p;
    for (std::size_t cell = 0; cell < single.bev.size() / c; ++cell) {
        bool any = false;
        for (std::size_t k = 0; k < c; ++k) any = any || single.bev[cell * c + k] != 0;
        if (any) {
            ++nonzero;
            at_cell = cell == static_cast<std::size_t>(q.iy) * cfg.grid.n_x + q.ix;
        }
    }
    const bool single_ok = single.cells.size() == 1 && nonzero == 1 && at_cell;
    ok = ok && single_ok;
    detail += fmt(", single point: %zu nonzero cell(s)%s", nonzero, at_cell ? " at its pillar" : "");

    std::vector<Point> outside;
    for (int i = 0; i < 50; ++i)
        outside.push_back({60.0f + i, 0.0f, 0.0f, 0.5f, 0.1f});
    outside.push_back({0, 0, 5.0f, 0.5f, 0.1f});
    outside.push_back({0, 0, 0, 0.5f, 0.6f});
    const auto out = encode_scene(outside, cfg.grid, m);
    const bool out_ok = out.cells.empty() && all_zero(out.bev);
    ok = ok && out_ok;
    detail += out_ok ? ", out of range: all zero" : ", out of range: WRONG";
    return {ok, detail};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

constexpr Criterion kCriteria[] = {
    {1, "grid oracle equivalence", grid_oracle},
    {2, "gradient fidelity", gradient_fidelity},
    {3, "zero-parameter closed forms", zero_parameters},
    {4, "dual-implementation oracle", dual_implementation},
    {5, "permutation/duplication invariance", invariance},
    {6, "label oracle", label_oracle},
    {7, "toy overfit", overfit},
    {8, "throughput", throughput},
    {9, "degenerate inputs", degenerate},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    nd::set_num_threads(1);
    int failures = 0;
    for (const auto& c : kCriteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures ? 1 : 0;
}
