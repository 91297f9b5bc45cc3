#include "fgpfe/gridding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fgpfe/binio.hpp"
#include "fgpfe/error.hpp"

namespace fgpfe {

namespace {

std::int32_t floor_index(double value, double origin, double cell, int n) {
    const double f = std::floor((value - origin) / cell);
    if (f < 0) return 0;
    if (f >= n) return n - 1;
    return static_cast<std::int32_t>(f);
}

// Monotone map from float to unsigned order; distinguishes -0 from +0.
std::uint32_t order_key(float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
}

std::uint64_t pack(CellCoord c) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.ix)) << 32) | static_cast<std::uint32_t>(c.iy);
}

CellCoord unpack(std::uint64_t k) {
    return {static_cast<std::int32_t>(k >> 32), static_cast<std::int32_t>(k & 0xffffffffu)};
}

void check_cells(std::span<const CellCoord> cells, int n_x, int n_y) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& c = cells[i];
        if (c.ix < 0 || c.ix >= n_x || c.iy < 0 || c.iy >= n_y) {
            throw ShapeError("cell (" + std::to_string(c.ix) + ", " + std::to_string(c.iy) + ") outside " +
                             std::to_string(n_x) + "x" + std::to_string(n_y) + " grid");
        }
        if (i > 0 && !(cells[i - 1] < c)) throw ShapeError("cells must be unique and sorted");
    }
}

}  // namespace

GridSpec GridSpec::from_ranges(std::array<double, 2> x, std::array<double, 2> y, std::array<double, 2> z,
                               std::array<double, 2> cell) {
    GridSpec g;
    g.x_min = x[0];
    g.x_max = x[1];
    g.y_min = y[0];
    g.y_max = y[1];
    g.z_min = z[0];
    g.z_max = z[1];
    g.dx = cell[0];
    g.dy = cell[1];
    if (g.dx > 0 && g.dy > 0) {
        g.n_x = static_cast<int>(std::lround((g.x_max - g.x_min) / g.dx));
        g.n_y = static_cast<int>(std::lround((g.y_max - g.y_min) / g.dy));
    }
    validate(g);
    return g;
}

GridSpec GridSpec::shifted() const {
    GridSpec g = *this;
    g.ox = ox + 0.5 * dx;
    g.oy = oy + 0.5 * dy;
    return g;
}

void validate(const GridSpec& g) {
    for (double v : {g.x_min, g.x_max, g.y_min, g.y_max, g.z_min, g.z_max, g.dx, g.dy}) {
        if (!std::isfinite(v)) throw ConfigError("grid", "non-finite value");
    }
    if (!(g.x_min < g.x_max)) throw ConfigError("grid.x_range", "min must be below max");
    if (!(g.y_min < g.y_max)) throw ConfigError("grid.y_range", "min must be below max");
    if (!(g.z_min < g.z_max)) throw ConfigError("grid.z_range", "min must be below max");
    if (!(g.dx > 0 && g.dy > 0)) throw ConfigError("grid.cell", "cell size must be positive");
    if (g.n_x < 1 || g.n_y < 1) throw ConfigError("grid.cell", "cell larger than the range");
}

void validate(const StvSpec& stv) {
    if (stv.h_p < 1) throw ConfigError("stv.h_p", "must be >= 1");
    if (stv.t_p < 1) throw ConfigError("stv.t_p", "must be >= 1");
}

StvIndex quantize_point(const Point& p, const GridSpec& grid, const StvSpec& stv) {
    StvIndex s;
    const double x = p.x, y = p.y, z = p.z, dt = p.dt;
    s.in_range = x >= grid.x_min && x < grid.x_max && y >= grid.y_min && y < grid.y_max && z >= grid.z_min &&
                 z < grid.z_max && dt >= 0.0 && dt < kSweepWindow;
    if (!s.in_range) return s;
    s.ix = floor_index(x, grid.x_min + grid.ox, grid.dx, grid.n_x);
    s.iy = floor_index(y, grid.y_min + grid.oy, grid.dy, grid.n_y);
    const GridSpec sg = grid.shifted();
    s.sx = floor_index(x, sg.x_min + sg.ox, sg.dx, sg.n_x);
    s.sy = floor_index(y, sg.y_min + sg.oy, sg.dy, sg.n_y);
    s.v = floor_index(z, grid.z_min, (grid.z_max - grid.z_min) / stv.h_p, stv.h_p);
    s.t = floor_index(dt, 0.0, kSweepWindow / stv.t_p, stv.t_p);
    return s;
}

std::vector<StvIndex> quantize(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv) {
    std::vector<StvIndex> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = quantize_point(points[i], grid, stv);
    return out;
}

PointTable canonicalize(std::span<const Point> points, std::span<const StvIndex> index) {
    if (points.size() != index.size()) throw ShapeError("canonicalize: points and index differ in length");
    // Content order (x, y, z, r, dt) packed into two words plus dt; the source
    // index breaks exact duplicates.
    struct Key {
        std::uint64_t xy, zr;
        std::uint32_t dt;
        std::size_t source;
    };
    std::vector<Key> keys;
    keys.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!index[i].in_range) continue;
        const auto& p = points[i];
        keys.push_back({std::uint64_t{order_key(p.x)} << 32 | order_key(p.y),
                        std::uint64_t{order_key(p.z)} << 32 | order_key(p.r), order_key(p.dt), i});
    }
    std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
        if (a.xy != b.xy) return a.xy < b.xy;
        if (a.zr != b.zr) return a.zr < b.zr;
        if (a.dt != b.dt) return a.dt < b.dt;
        return a.source < b.source;
    });
    PointTable table;
    table.points.reserve(keys.size());
    table.index.reserve(keys.size());
    table.source.reserve(keys.size());
    for (const auto& k : keys) {
        table.points.push_back(points[k.source]);
        table.index.push_back(index[k.source]);
        table.source.push_back(k.source);
    }
    return table;
}

std::string to_string(GroupKey key) {
    switch (key) {
        case GroupKey::pillar: return "pillar";
        case GroupKey::pillar_vertical: return "pillar_vertical";
        case GroupKey::pillar_temporal: return "pillar_temporal";
        case GroupKey::shifted_pillar: return "shifted_pillar";
    }
    return "?";
}

GridSpec grid_for(GroupKey key, const GridSpec& grid) {
    return key == GroupKey::shifted_pillar ? grid.shifted() : grid;
}

nd::Tensor Grouping::mask() const {
    nd::Tensor m({cells.size(), bins});
    for (std::size_t s = 0; s < counts.size(); ++s) m[s] = counts[s] > 0 ? 1.0 : 0.0;
    return m;
}

namespace {

std::size_t bins_for(GroupKey key, const StvSpec& stv) {
    return key == GroupKey::pillar_vertical   ? static_cast<std::size_t>(stv.h_p)
           : key == GroupKey::pillar_temporal ? static_cast<std::size_t>(stv.t_p)
                                              : 1;
}

// Fills segment ids, counts and means once cells and cell_of_row are set.
void fill_segments(const PointTable& table, Grouping& g) {
    const std::size_t rows = table.points.size();
    g.segment.resize(rows);
    g.counts.assign(g.n_segments(), 0);
    g.mean_xyz.assign(g.n_segments(), {0.0, 0.0, 0.0});
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& s = table.index[r];
        const std::size_t bin = g.key == GroupKey::pillar_vertical   ? static_cast<std::size_t>(s.v)
                                : g.key == GroupKey::pillar_temporal ? static_cast<std::size_t>(s.t)
                                                                     : 0;
        const std::size_t seg = g.cell_of_row[r] * g.bins + bin;
        g.segment[r] = seg;
        ++g.counts[seg];
        const auto& p = table.points[r];
        auto& m = g.mean_xyz[seg];
        m[0] += p.x;
        m[1] += p.y;
        m[2] += p.z;
    }
    for (std::size_t s = 0; s < g.n_segments(); ++s) {
        if (g.counts[s] < 2) continue;
        const double n = g.counts[s];
        auto& m = g.mean_xyz[s];
        m = {m[0] / n, m[1] / n, m[2] / n};
    }
}

}  // namespace

Grouping make_grouping(const PointTable& table, GroupKey key, const StvSpec& stv) {
    Grouping g;
    g.key = key;
    g.bins = bins_for(key, stv);
    const std::size_t rows = table.points.size();
    std::vector<std::uint64_t> row_key(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& s = table.index[r];
        row_key[r] = key == GroupKey::shifted_pillar ? pack({s.sx, s.sy}) : pack({s.ix, s.iy});
    }
    std::vector<std::uint64_t> uniq = row_key;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    g.cells.reserve(uniq.size());
    for (auto k : uniq) g.cells.push_back(unpack(k));
    g.cell_of_row.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        g.cell_of_row[r] =
            static_cast<std::size_t>(std::lower_bound(uniq.begin(), uniq.end(), row_key[r]) - uniq.begin());
    }
    fill_segments(table, g);
    return g;
}

Grouping make_grouping(const PointTable& table, GroupKey key, const StvSpec& stv, const Grouping& cells_from) {
    if ((key == GroupKey::shifted_pillar) != (cells_from.key == GroupKey::shifted_pillar)) {
        throw Error("make_grouping: " + to_string(key) + " cannot reuse the cells of a " + to_string(cells_from.key) +
                    " grouping");
    }
    if (cells_from.cell_of_row.size() != table.points.size()) {
        throw Error("make_grouping: reused grouping does not cover the table");
    }
    Grouping g;
    g.key = key;
    g.bins = bins_for(key, stv);
    g.cells = cells_from.cells;
    g.cell_of_row = cells_from.cell_of_row;
    fill_segments(table, g);
    return g;
}

void augment_point(const Point& p, const GroupContext& ctx, std::span<double> out) {
    const double x = p.x, y = p.y, z = p.z;
    out[0] = x;
    out[1] = y;
    out[2] = z;
    out[3] = p.r;
    out[4] = p.dt;
    out[5] = x - ctx.mean[0];
    out[6] = y - ctx.mean[1];
    out[7] = z - ctx.mean[2];
    out[8] = x - ctx.center_x;
    out[9] = y - ctx.center_y;
}

GroupContext context_of_row(const PointTable&, const Grouping& grouping, const GridSpec& grid, std::size_t row) {
    const GridSpec cell_grid = grid_for(grouping.key, grid);
    GroupContext ctx;
    const std::size_t seg = grouping.segment[row];
    ctx.cell = grouping.cells[grouping.cell_of_row[row]];
    ctx.bin = seg % grouping.bins;
    ctx.mean = grouping.mean_xyz[seg];
    ctx.center_x = cell_grid.center_x(ctx.cell.ix);
    ctx.center_y = cell_grid.center_y(ctx.cell.iy);
    return ctx;
}

nd::Tensor augment(const PointTable& table, const Grouping& grouping, const GridSpec& grid) {
    const std::size_t rows = table.points.size();
    nd::Tensor out({rows, kAugmentDim});
    const GridSpec cell_grid = grid_for(grouping.key, grid);
    auto data = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        GroupContext ctx;
        const std::size_t seg = grouping.segment[r];
        ctx.cell = grouping.cells[grouping.cell_of_row[r]];
        ctx.mean = grouping.mean_xyz[seg];
        ctx.center_x = cell_grid.center_x(ctx.cell.ix);
        ctx.center_y = cell_grid.center_y(ctx.cell.iy);
        augment_point(table.points[r], ctx, data.subspan(r * kAugmentDim, kAugmentDim));
    }
    return out;
}

SparseFeatureSet GroupedFeatures::sparse(const GridSpec& grid) const {
    const GridSpec g = grid_for(key, grid);
    const std::size_t n = cells.size();
    const std::size_t width = n ? feats.size() / n : (feats.rank() ? feats.shape().back() : 0);
    return {cells, feats.reshaped({n, width}), g.n_x, g.n_y};
}

GroupedFeatures group_pool(const PointTable& table, const Grouping& grouping, const GridSpec& grid,
                           nd::ReduceMode mode, std::size_t channels, const FeatureFn& feature_fn) {
    const std::size_t rows = table.points.size();
    nd::Tensor per_point({rows, channels});
    for (std::size_t r = 0; r < rows; ++r) {
        feature_fn(table.points[r], context_of_row(table, grouping, grid, r),
                   per_point.data().subspan(r * channels, channels));
    }
    nd::Tensor pooled;
    {
        nd::NoGradGuard no_grad;
        pooled = nd::segment_reduce(nd::Var::constant(std::move(per_point)), grouping.segment, grouping.n_segments(), mode)
                     .value();
    }
    GroupedFeatures out;
    out.key = grouping.key;
    out.cells = grouping.cells;
    out.mask = grouping.mask();
    if (grouping.key == GroupKey::pillar_vertical || grouping.key == GroupKey::pillar_temporal) {
        out.feats = pooled.reshaped({grouping.n_cells(), grouping.bins, channels});
    } else {
        out.feats = std::move(pooled);
    }
    return out;
}

GroupedFeatures group_pool(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv, GroupKey key,
                           nd::ReduceMode mode, std::size_t channels, const FeatureFn& feature_fn) {
    const auto index = quantize(points, grid, stv);
    const auto table = canonicalize(points, index);
    const auto grouping = make_grouping(table, key, stv);
    return group_pool(table, grouping, grid, mode, channels, feature_fn);
}

nd::Tensor scatter_to_bev(const SparseFeatureSet& sparse) {
    check_cells(sparse.cells, sparse.n_x, sparse.n_y);
    const std::size_t n = sparse.cells.size();
    if (sparse.feats.rank() != 2 || sparse.feats.dim(0) != n) {
        throw ShapeError("scatter_to_bev: features " + nd::shape_str(sparse.feats.shape()) + " for " + std::to_string(n) +
                         " cells");
    }
    const std::size_t c = sparse.feats.dim(1);
    nd::Tensor bev({static_cast<std::size_t>(sparse.n_y), static_cast<std::size_t>(sparse.n_x), c});
    auto dst = bev.data();
    auto src = sparse.feats.data();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& cell = sparse.cells[i];
        const std::size_t at = (static_cast<std::size_t>(cell.iy) * sparse.n_x + cell.ix) * c;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * c), c, dst.begin() + static_cast<std::ptrdiff_t>(at));
    }
    return bev;
}

SparseFeatureSet gather_from_bev(const nd::Tensor& bev, std::span<const CellCoord> cells) {
    if (bev.rank() != 3) throw ShapeError("gather_from_bev: expected [n_y, n_x, C], got " + nd::shape_str(bev.shape()));
    SparseFeatureSet out;
    out.n_y = static_cast<int>(bev.dim(0));
    out.n_x = static_cast<int>(bev.dim(1));
    check_cells(cells, out.n_x, out.n_y);
    const std::size_t c = bev.dim(2);
    out.cells.assign(cells.begin(), cells.end());
    out.feats = nd::Tensor({cells.size(), c});
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::size_t at = (static_cast<std::size_t>(cells[i].iy) * out.n_x + cells[i].ix) * c;
        for (std::size_t k = 0; k < c; ++k) out.feats[i * c + k] = bev[at + k];
    }
    return out;
}

void save_sparse(const SparseFeatureSet& sparse, const std::string& path) {
    const std::size_t n = sparse.cells.size();
    const std::size_t c = n ? sparse.feats.size() / n : (sparse.feats.rank() == 2 ? sparse.feats.dim(1) : 0);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (auto v : {static_cast<std::uint32_t>(sparse.n_x), static_cast<std::uint32_t>(sparse.n_y),
                   static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(n)})
        binio::put<std::uint32_t>(out, v);
    for (const auto& cell : sparse.cells) {
        binio::put<std::int32_t>(out, cell.ix);
        binio::put<std::int32_t>(out, cell.iy);
    }
    for (double v : sparse.feats.data()) binio::put<double>(out, v);
    if (!out) throw IoError("failed writing " + path);
}

SparseFeatureSet load_sparse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    SparseFeatureSet s;
    s.n_x = static_cast<int>(binio::get<std::uint32_t>(in, "sparse header"));
    s.n_y = static_cast<int>(binio::get<std::uint32_t>(in, "sparse header"));
    const std::size_t c = binio::get<std::uint32_t>(in, "sparse header");
    const std::size_t n = binio::get<std::uint32_t>(in, "sparse header");
    s.cells.resize(n);
    for (auto& cell : s.cells) {
        cell.ix = binio::get<std::int32_t>(in, "sparse coords");
        cell.iy = binio::get<std::int32_t>(in, "sparse coords");
    }
    s.feats = nd::Tensor({n, c});
    for (auto& v : s.feats.data()) v = binio::get<double>(in, "sparse payload");
    return s;
}

}  // namespace fgpfe
