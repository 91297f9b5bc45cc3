#include "fgpfe/checks.hpp"

#include <array>

#include "fgpfe/pipeline.hpp"

namespace fgpfe {

namespace {

using nd::GradGraph;
using nd::Parameter;
using nd::Shape;
using nd::Tensor;
using nd::Var;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Parameter(name, random_tensor(std::move(shape), rng, lo, hi));
}

// Builds a graph whose scalar output is a fixed random projection of f().
GradGraph projected(std::string name, std::vector<Parameter> params, std::function<Var()> f, Rng& rng) {
    Tensor weights;
    {
        nd::NoGradGuard g;
        weights = random_tensor(f().shape(), rng);
    }
    return {std::move(name), std::move(params), [f = std::move(f), weights]() { return nd::weighted_sum(f(), weights); }};
}

}  // namespace

Scene grad_patch_scene(const GridSpec& grid, std::size_t n_points, std::uint64_t seed) {
    Rng rng(seed);
    Scene s;
    const int ix0 = grid.n_x / 2 - 2, iy0 = grid.n_y / 2 - 2;
    const double x0 = grid.x_min + ix0 * grid.dx, y0 = grid.y_min + iy0 * grid.dy;
    s.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        Point p;
        p.x = static_cast<float>(x0 + rng.uniform(0.02, 4.98) * grid.dx);
        p.y = static_cast<float>(y0 + rng.uniform(0.02, 4.98) * grid.dy);
        p.z = static_cast<float>(rng.uniform(grid.z_min + 0.01, grid.z_max - 0.01));
        p.r = static_cast<float>(rng.unit());
        p.dt = static_cast<float>(rng.uniform(0.0, 0.499));
        s.points.push_back(p);
    }
    Box3D box;
    box.cx = x0 + 1.5 * grid.dx;
    box.cy = y0 + 2.5 * grid.dy;
    box.cz = 0.5 * (grid.z_min + grid.z_max);
    box.l = 3.0 * grid.dx;
    box.w = 5.0 * grid.dy;
    box.h = 1.0;
    box.yaw = 0.0;
    s.boxes.push_back(box);
    return s;
}

std::vector<GradGraph> gradient_suite(const RunConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradGraph> out;

    {
        auto x = random_param("x", {5, 7}, rng), w = random_param("w", {4, 7}, rng), b = random_param("b", {4}, rng);
        out.push_back(projected("linear", {x, w, b}, [=] { return nd::linear(x, w, b); }, rng));
    }
    {
        auto x = random_param("x", {3, 6, 2}, rng), k = random_param("k", {3, 2, 3}, rng);
        out.push_back(projected("conv1d", {x, k}, [=] { return nd::conv1d(x, k); }, rng));
    }
    {
        auto x = random_param("x", {4, 5, 3}, rng);
        out.push_back(projected("reduce_mean", {x}, [=] { return nd::reduce(x, 1, nd::ReduceMode::mean); }, rng));
        auto y = random_param("y", {4, 5, 3}, rng);
        out.push_back(projected("reduce_max", {y}, [=] { return nd::reduce(y, 2, nd::ReduceMode::max, true); }, rng));
    }
    {
        auto x = random_param("x", {20}, rng, -4.0, 4.0);
        out.push_back(projected("sigmoid", {x}, [=] { return nd::sigmoid(x); }, rng));
        auto y = random_param("y", {20}, rng);
        out.push_back(projected("relu", {y}, [=] { return nd::relu(y); }, rng));
    }
    {
        auto a = random_param("a", {4, 1, 3}, rng), b = random_param("b", {4, 5, 1}, rng);
        out.push_back(projected("ewmul_broadcast", {a, b}, [=] { return nd::ewmul(a, b); }, rng));
        auto c = random_param("c", {4, 5, 3}, rng), d = random_param("d", {1, 5, 1}, rng);
        out.push_back(projected("add_broadcast", {c, d}, [=] { return nd::scale(nd::add(c, d), -1.5); }, rng));
    }
    {
        auto a = random_param("a", {3, 2}, rng), b = random_param("b", {3, 4}, rng);
        out.push_back(projected(
            "concat_slice_reshape", {a, b},
            [=] {
                const std::array<Var, 2> parts{a, b};
                return nd::reshape(nd::slice(nd::concat(parts, 1), 1, 1, 5), {12});
            },
            rng));
    }
    {
        auto x = random_param("x", {5, 3}, rng);
        const std::vector<std::size_t> rows{4, 0, 0, 2};
        out.push_back(projected("gather_rows", {x}, [=] { return nd::gather_rows(x, rows); }, rng));
        auto y = random_param("y", {3, 3}, rng);
        const std::vector<std::size_t> dest{3, 0, 5};
        out.push_back(projected("scatter_rows", {y}, [=] { return nd::scatter_rows(y, dest, 7); }, rng));
    }
    {
        const std::vector<std::size_t> seg{0, 0, 1, 3, 3, 3, 1, 0};
        auto x = random_param("x", {8, 3}, rng);
        out.push_back(projected("segment_mean", {x}, [=] { return nd::segment_reduce(x, seg, 5, nd::ReduceMode::mean); },
                                rng));
        auto y = random_param("y", {8, 3}, rng);
        out.push_back(projected("segment_max", {y}, [=] { return nd::segment_reduce(y, seg, 5, nd::ReduceMode::max); },
                                rng));
    }
    {
        auto p = random_param("p", {12}, rng, 0.05, 0.95);
        Tensor target({12});
        for (std::size_t i = 0; i < 12; ++i) target[i] = rng.below(2) ? 1.0 : 0.0;
        const nd::FocalParams focal = cfg.focal;
        out.push_back({"focal_loss", {p}, [=] { return nd::focal_loss(p, target, focal); }});
    }

    // Full encoder graphs on a small patch scene.
    const Scene patch = grad_patch_scene(cfg.grid, 96, seed + 1);
    const auto prepared = std::make_shared<PreparedScene>(prepare_scene(patch.points, cfg.grid, cfg.stv));
    const FgPfeModel model = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, seed + 2);

    {
        std::vector<Parameter> ps;
        model.vpfe.collect(ps);
        const VpfeState st = model.vpfe;
        out.push_back(projected("vpfe", ps, [=] { return encode_vertical(*prepared, st).feats; }, rng));
    }
    {
        std::vector<Parameter> ps;
        model.tpfe.collect(ps);
        const TpfeState st = model.tpfe;
        out.push_back(projected("tpfe", ps, [=] { return encode_temporal(*prepared, st).feats; }, rng));
    }
    {
        std::vector<Parameter> ps;
        model.hpfe.collect(ps);
        const HpfeState st = model.hpfe;
        out.push_back(projected("hpfe", ps, [=] { return encode_horizontal(*prepared, st).feats; }, rng));
    }
    {
        const std::size_t n = prepared->pillar.n_cells(), c = cfg.enc.c_p;
        auto v = random_param("branch.v", {n, c}, rng), t = random_param("branch.t", {n, c}, rng),
             h = random_param("branch.h", {n, c}, rng);
        std::vector<Parameter> ps{v, t, h};
        model.apa.collect(ps);
        const ApaState st = model.apa;
        out.push_back(projected("apa", ps, [=] { return apa_forward(v, t, h, st); }, rng));
    }
    {
        std::vector<Parameter> ps;
        model.vpfe.collect(ps);
        model.tpfe.collect(ps);
        model.hpfe.collect(ps);
        model.heads.collect(ps);
        const double lambda = cfg.lambda_gl;
        const nd::FocalParams focal = cfg.focal;
        const std::vector<Box3D> boxes = patch.boxes;
        out.push_back({"objectness_loss", ps, [=] {
                           const auto b = encode_branches(*prepared, model);
                           const auto labels = make_labels(b.cells, prepared->grid, boxes);
                           return objectness_loss(b.v, b.t, b.h, labels, model.heads, lambda, focal);
                       }});
    }
    return out;
}

std::vector<nd::GradCheckReport> run_gradient_suite(const RunConfig& cfg, const nd::GradCheckOptions& options,
                                                    std::uint64_t seed) {
    std::vector<nd::GradCheckReport> reports;
    for (const auto& g : gradient_suite(cfg, seed)) reports.push_back(nd::fd_check(g, options));
    return reports;
}

}  // namespace fgpfe
