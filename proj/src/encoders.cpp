#include "fgpfe/encoders.hpp"

#include <algorithm>

#include "fgpfe/error.hpp"
#include "fgpfe/ops.hpp"
#include "fgpfe/optim.hpp"
#include "row_kernel.hpp"

namespace fgpfe {

Dense Dense::make(const std::string& name, std::size_t out, std::size_t in, bool with_bias, bool relu, Rng& rng) {
    Dense d;
    d.weight = nd::Parameter(name + ".weight", nd::uniform_init({out, in}, in, rng));
    if (with_bias) d.bias = nd::Parameter(name + ".bias", nd::Tensor({out}, 0.0));
    d.relu = relu;
    return d;
}

nd::Var Dense::operator()(const nd::Var& x) const {
    nd::Var y = nd::linear(x, weight, bias.defined() ? bias.var() : nd::Var{});
    return relu ? nd::relu(y) : y;
}

void Dense::collect(std::vector<nd::Parameter>& out) const {
    out.push_back(weight);
    if (bias.defined()) out.push_back(bias);
}

void validate(const EncoderConfig& cfg) {
    if (cfg.c_p < 1) throw ConfigError("model.c_p", "must be >= 1");
    if (cfg.reduction < 1 || cfg.c_p % cfg.reduction != 0) throw ConfigError("model.r", "must divide model.c_p");
    if (cfg.conv_k < 1 || cfg.conv_k % 2 == 0) throw ConfigError("model.conv_k", "must be odd");
}

VpfeState VpfeState::make(const EncoderConfig& cfg, std::size_t h_p, Rng& rng) {
    validate(cfg);
    const std::size_t hidden = cfg.c_p / cfg.reduction;
    VpfeState s;
    s.h_p = h_p;
    s.lift = Dense::make("vpfe.lift", cfg.c_p, kAugmentDim, true, true, rng);
    s.w0 = nd::Parameter("vpfe.w0", nd::uniform_init({hidden, cfg.c_p}, cfg.c_p, rng));
    s.w1 = nd::Parameter("vpfe.w1", nd::uniform_init({cfg.c_p, hidden}, hidden, rng));
    s.conv = nd::Parameter("vpfe.conv", nd::uniform_init({1, 2, cfg.conv_k}, 2 * cfg.conv_k, rng));
    s.psi = Dense::make("vpfe.psi", cfg.c_p, h_p * cfg.c_p, true, cfg.psi_relu, rng);
    return s;
}

void VpfeState::collect(std::vector<nd::Parameter>& out) const {
    lift.collect(out);
    out.push_back(w0);
    out.push_back(w1);
    out.push_back(conv);
    psi.collect(out);
}

TpfeState TpfeState::make(const EncoderConfig& cfg, std::size_t t_p, Rng& rng) {
    validate(cfg);
    TpfeState s;
    s.t_p = t_p;
    s.lift = Dense::make("tpfe.lift", cfg.c_p, kAugmentDim, true, true, rng);
    s.psi = Dense::make("tpfe.psi", cfg.c_p, t_p * cfg.c_p, true, cfg.psi_relu, rng);
    return s;
}

void TpfeState::collect(std::vector<nd::Parameter>& out) const {
    lift.collect(out);
    psi.collect(out);
}

HpfeState HpfeState::make(const EncoderConfig& cfg, Rng& rng) {
    validate(cfg);
    HpfeState s;
    s.lift_base = Dense::make("hpfe.lift_base", cfg.c_p, kAugmentDim, true, true, rng);
    s.lift_shifted = Dense::make("hpfe.lift_shifted", cfg.c_p, kAugmentDim, true, true, rng);
    s.psi = Dense::make("hpfe.psi", cfg.c_p, 2 * cfg.c_p, true, cfg.psi_relu, rng);
    return s;
}

void HpfeState::collect(std::vector<nd::Parameter>& out) const {
    lift_base.collect(out);
    lift_shifted.collect(out);
    psi.collect(out);
}

nd::Var pool_bins(const nd::Tensor& augmented, const Grouping& grouping, const Dense& lift) {
    const nd::Var lifted = lift(nd::Var::constant(augmented));
    const nd::Var pooled = nd::segment_reduce(lifted, grouping.segment, grouping.n_segments(), nd::ReduceMode::mean);
    return nd::reshape(pooled, {grouping.n_cells(), grouping.bins, lift.out_features()});
}

nd::Var channel_attention(const nd::Var& p, const VpfeState& state) {
    if (p.shape().size() != 3) throw ShapeError("channel_attention: expected [N, H, C], got " + nd::shape_str(p.shape()));
    const std::size_t n = p.dim(0), c = p.dim(2);
    const nd::Var avg = nd::reduce(p, 1, nd::ReduceMode::mean);
    const nd::Var max = nd::reduce(p, 1, nd::ReduceMode::max);
    const nd::Var a = nd::linear(nd::relu(nd::linear(avg, state.w0)), state.w1);
    const nd::Var m = nd::linear(nd::relu(nd::linear(max, state.w0)), state.w1);
    return nd::reshape(nd::sigmoid(nd::add(a, m)), {n, 1, c});
}

nd::Var vertical_attention(const nd::Var& p, const VpfeState& state) {
    if (p.shape().size() != 3) throw ShapeError("vertical_attention: expected [N, H, C], got " + nd::shape_str(p.shape()));
    const nd::Var parts[] = {nd::reduce(p, 2, nd::ReduceMode::mean, true), nd::reduce(p, 2, nd::ReduceMode::max, true)};
    return nd::sigmoid(nd::conv1d(nd::concat(parts, 2), state.conv));
}

nd::Var vgam(const nd::Var& p, const nd::Tensor& mask, const VpfeState& state) {
    if (p.shape().size() != 3 || p.dim(1) != state.h_p) {
        throw ShapeError("vgam: expected [N, " + std::to_string(state.h_p) + ", C], got " + nd::shape_str(p.shape()));
    }
    const std::size_t n = p.dim(0), h = p.dim(1);
    if (mask.size() != n * h) throw ShapeError("vgam: mask " + nd::shape_str(mask.shape()) + " for " + nd::shape_str(p.shape()));
    const nd::Var p1 = nd::ewmul(channel_attention(p, state), p);
    const nd::Var p2 = nd::ewmul(vertical_attention(p1, state), p1);
    return nd::ewmul(p2, nd::Var::constant(mask.reshaped({n, h, 1})));
}

nd::Var vpfe_forward(const nd::Var& p, const nd::Tensor& mask, const VpfeState& state) {
    const nd::Var p2 = vgam(p, mask, state);
    return state.psi(nd::reshape(p2, {p2.dim(0), p2.dim(1) * p2.dim(2)}));
}

nd::Var tpfe_forward(const nd::Var& p, const TpfeState& state) {
    if (p.shape().size() != 3 || p.dim(1) != state.t_p || p.dim(1) * p.dim(2) != state.psi.in_features()) {
        throw ShapeError("tpfe_forward: expected [N, " + std::to_string(state.t_p) + ", C], got " +
                         nd::shape_str(p.shape()));
    }
    return state.psi(nd::reshape(p, {p.dim(0), p.dim(1) * p.dim(2)}));
}

nd::Var hpfe_forward(const PointTable& table, const Grouping& base, const Grouping& shifted, const GridSpec& grid,
                     const HpfeState& state) {
    if (base.key != GroupKey::pillar || shifted.key != GroupKey::shifted_pillar) {
        throw Error("hpfe_forward: needs a pillar grouping and a shifted_pillar grouping");
    }
    if (base.segment.size() != table.points.size() || shifted.segment.size() != table.points.size()) {
        throw Error("hpfe_forward: groupings do not cover the point table");
    }
    const nd::Var lifted_base = state.lift_base(nd::Var::constant(augment(table, base, grid)));
    const nd::Var lifted_shift = state.lift_shifted(nd::Var::constant(augment(table, shifted, grid)));
    const nd::Var p_op = nd::segment_reduce(lifted_base, base.segment, base.n_segments(), nd::ReduceMode::max);
    const nd::Var p_sp = nd::segment_reduce(lifted_shift, shifted.segment, shifted.n_segments(), nd::ReduceMode::max);
    // Each point reads the pooled feature of its cell on both grids.
    const nd::Var per_point[] = {nd::gather_rows(p_op, base.segment), nd::gather_rows(p_sp, shifted.segment)};
    const nd::Var fused = state.psi(nd::concat(per_point, 1));
    return nd::segment_reduce(fused, base.segment, base.n_segments(), nd::ReduceMode::max);
}

namespace {

// Rows of a grouping bucketed by segment, row order kept inside each bucket.
struct SegmentRows {
    std::vector<std::size_t> start;
    std::vector<std::size_t> rows;

    explicit SegmentRows(const Grouping& g) : start(g.n_segments() + 1, 0), rows(g.segment.size()) {
        for (std::size_t s = 0; s < g.n_segments(); ++s) start[s + 1] = start[s] + g.counts[s];
        std::vector<std::size_t> fill(start.begin(), start.end() - 1);
        for (std::size_t r = 0; r < g.segment.size(); ++r) rows[fill[g.segment[r]]++] = r;
    }
};

// Lifts and mean-pools every bin of one cell into p [bins, C].
void pool_cell(const PointTable& table, const Grouping& g, const SegmentRows& sr, const GridSpec& cell_grid,
               const RowKernel& lift, std::size_t cell, double* p, double* scratch) {
    const std::size_t c = lift.out();
    double aug[kAugmentDim];
    GroupContext ctx;
    ctx.cell = g.cells[cell];
    ctx.center_x = cell_grid.center_x(ctx.cell.ix);
    ctx.center_y = cell_grid.center_y(ctx.cell.iy);
    for (std::size_t b = 0; b < g.bins; ++b) {
        const std::size_t seg = cell * g.bins + b;
        double* row = p + b * c;
        std::fill(row, row + c, 0.0);
        if (g.counts[seg] == 0) continue;
        ctx.bin = b;
        ctx.mean = g.mean_xyz[seg];
        for (std::size_t k = sr.start[seg]; k < sr.start[seg + 1]; ++k) {
            augment_point(table.points[sr.rows[k]], ctx, aug);
            lift(aug, scratch);
            for (std::size_t j = 0; j < c; ++j) row[j] += scratch[j];
        }
        const double n = static_cast<double>(g.counts[seg]);
        for (std::size_t j = 0; j < c; ++j) row[j] /= n;
    }
}

void check_grouping(const PointTable& table, const Grouping& g, GroupKey key, const char* who) {
    if (g.key != key) throw Error(std::string(who) + ": expected a " + to_string(key) + " grouping");
    if (g.segment.size() != table.points.size()) throw Error(std::string(who) + ": grouping does not cover the table");
}

// Max-pools lifted rows per cell; the first row of a cell wins ties.
nd::Tensor pool_max(const PointTable& table, const Grouping& g, const GridSpec& grid, const RowKernel& lift) {
    const std::size_t c = lift.out();
    const GridSpec cell_grid = grid_for(g.key, grid);
    nd::Tensor out({g.n_cells(), c});
    double* ov = out.data().data();
    std::vector<char> seen(g.n_cells(), 0);
    std::vector<double> y(c);
    double aug[kAugmentDim];
    for (std::size_t r = 0; r < table.points.size(); ++r) {
        const std::size_t seg = g.segment[r];
        GroupContext ctx;
        ctx.cell = g.cells[seg];
        ctx.mean = g.mean_xyz[seg];
        ctx.center_x = cell_grid.center_x(ctx.cell.ix);
        ctx.center_y = cell_grid.center_y(ctx.cell.iy);
        augment_point(table.points[r], ctx, aug);
        lift(aug, y.data());
        double* o = ov + seg * c;
        if (!seen[seg]) {
            std::copy(y.begin(), y.end(), o);
            seen[seg] = 1;
        } else {
            for (std::size_t j = 0; j < c; ++j)
                if (y[j] > o[j]) o[j] = y[j];
        }
    }
    return out;
}

}  // namespace

nd::Tensor vpfe_encode(const PointTable& table, const Grouping& g, const GridSpec& grid, const VpfeState& state) {
    check_grouping(table, g, GroupKey::pillar_vertical, "vpfe_encode");
    if (g.bins != state.h_p) throw ShapeError("vpfe_encode: grouping has " + std::to_string(g.bins) + " bins, state expects " +
                                              std::to_string(state.h_p));
    const RowKernel lift(state.lift), psi(state.psi);
    const RowKernel w0(state.w0.value(), nullptr, true), w1(state.w1.value(), nullptr, false);
    const std::size_t h = g.bins, c = lift.out(), hidden = w0.out();
    const std::size_t k = state.conv.shape()[2];
    const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    const double* kv = state.conv.value().data().data();
    const SegmentRows sr(g);

    nd::Tensor out({g.n_cells(), psi.out()});
    std::vector<double> p(h * c), scratch(c), avg(c), mx(c), hid(hidden), a(c), m(c), vm(2 * h), mv(h);
    for (std::size_t n = 0; n < g.n_cells(); ++n) {
        pool_cell(table, g, sr, grid, lift, n, p.data(), scratch.data());

        std::fill(avg.begin(), avg.end(), 0.0);
        std::copy_n(p.begin(), c, mx.begin());
        for (std::size_t b = 0; b < h; ++b) {
            const double* row = p.data() + b * c;
            for (std::size_t j = 0; j < c; ++j) avg[j] += row[j];
            if (b == 0) continue;
            for (std::size_t j = 0; j < c; ++j) mx[j] = row[j] > mx[j] ? row[j] : mx[j];
        }
        for (std::size_t j = 0; j < c; ++j) avg[j] /= static_cast<double>(h);
        w0(avg.data(), hid.data());
        w1(hid.data(), a.data());
        w0(mx.data(), hid.data());
        w1(hid.data(), m.data());
        for (std::size_t j = 0; j < c; ++j) a[j] = nd::logistic(a[j] + m[j]);
        for (std::size_t b = 0; b < h; ++b) {
            if (g.counts[n * h + b] == 0) continue;
            double* row = p.data() + b * c;
            for (std::size_t j = 0; j < c; ++j) row[j] = a[j] * row[j];
        }

        for (std::size_t b = 0; b < h; ++b) {
            const double* row = p.data() + b * c;
            if (g.counts[n * h + b] == 0) {
                vm[2 * b] = vm[2 * b + 1] = 0.0;
                continue;
            }
            double acc = 0.0, best = row[0];
            for (std::size_t j = 0; j < c; ++j) acc += row[j];
            for (std::size_t j = 1; j < c; ++j) best = row[j] > best ? row[j] : best;
            vm[2 * b] = acc / static_cast<double>(c);
            vm[2 * b + 1] = best;
        }
        for (std::size_t l = 0; l < h; ++l) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < 2; ++ch) {
                for (std::size_t t = 0; t < k; ++t) {
                    const auto src = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(h)) continue;
                    acc += kv[ch * k + t] * vm[2 * static_cast<std::size_t>(src) + ch];
                }
            }
            mv[l] = nd::logistic(acc);
        }
        // Empty bins are still all zero here; the mask keeps them that way.
        for (std::size_t b = 0; b < h; ++b) {
            if (g.counts[n * h + b] == 0) continue;
            double* row = p.data() + b * c;
            for (std::size_t j = 0; j < c; ++j) row[j] = mv[b] * row[j] * 1.0;
        }
        psi(p.data(), out.data().data() + n * psi.out());
    }
    return out;
}

nd::Tensor tpfe_encode(const PointTable& table, const Grouping& g, const GridSpec& grid, const TpfeState& state) {
    check_grouping(table, g, GroupKey::pillar_temporal, "tpfe_encode");
    if (g.bins != state.t_p) throw ShapeError("tpfe_encode: grouping has " + std::to_string(g.bins) + " bins, state expects " +
                                              std::to_string(state.t_p));
    const RowKernel lift(state.lift), psi(state.psi);
    const SegmentRows sr(g);
    nd::Tensor out({g.n_cells(), psi.out()});
    std::vector<double> p(g.bins * lift.out()), scratch(lift.out());
    for (std::size_t n = 0; n < g.n_cells(); ++n) {
        pool_cell(table, g, sr, grid, lift, n, p.data(), scratch.data());
        psi(p.data(), out.data().data() + n * psi.out());
    }
    return out;
}

nd::Tensor hpfe_encode(const PointTable& table, const Grouping& base, const Grouping& shifted, const GridSpec& grid,
                       const HpfeState& state) {
    check_grouping(table, base, GroupKey::pillar, "hpfe_encode");
    check_grouping(table, shifted, GroupKey::shifted_pillar, "hpfe_encode");
    const RowKernel psi(state.psi);
    const nd::Tensor p_op = pool_max(table, base, grid, RowKernel(state.lift_base));
    const nd::Tensor p_sp = pool_max(table, shifted, grid, RowKernel(state.lift_shifted));
    const std::size_t c = p_op.shape()[1], co = psi.out();
    nd::Tensor out({base.n_cells(), co});
    double* ov = out.data().data();
    std::vector<char> seen(base.n_cells(), 0);
    std::vector<double> cat(2 * c), y(co);
    for (std::size_t r = 0; r < table.points.size(); ++r) {
        const std::size_t s0 = base.segment[r], s1 = shifted.segment[r];
        std::copy_n(p_op.data().data() + s0 * c, c, cat.begin());
        std::copy_n(p_sp.data().data() + s1 * c, c, cat.begin() + static_cast<std::ptrdiff_t>(c));
        psi(cat.data(), y.data());
        double* o = ov + s0 * co;
        if (!seen[s0]) {
            std::copy(y.begin(), y.end(), o);
            seen[s0] = 1;
        } else {
            for (std::size_t j = 0; j < co; ++j)
                if (y[j] > o[j]) o[j] = y[j];
        }
    }
    return out;
}

SparseFeatureSet hpfe_forward(std::span<const Point> points, std::span<const StvIndex> index, const GridSpec& grid,
                              const StvSpec& stv, const HpfeState& state) {
    if (points.size() != index.size()) throw Error("hpfe_forward: missing index data");
    const PointTable table = canonicalize(points, index);
    const Grouping base = make_grouping(table, GroupKey::pillar, stv);
    const Grouping shifted = make_grouping(table, GroupKey::shifted_pillar, stv);
    const nd::Var out = hpfe_forward(table, base, shifted, grid, state);
    return {base.cells, out.value(), grid.n_x, grid.n_y};
}

}  // namespace fgpfe
