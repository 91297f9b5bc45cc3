#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fgpfe/ops.hpp"
#include "fgpfe/pcio.hpp"
#include "fgpfe/tensor.hpp"

namespace fgpfe {

/// BEV pillar grid. Ranges are [min, max); the shifted grid shares the ranges
/// and moves its origin by (ox, oy).
struct GridSpec {
    double x_min = -54.0, x_max = 54.0;
    double y_min = -54.0, y_max = 54.0;
    double z_min = -5.0, z_max = 3.0;
    double dx = 0.075, dy = 0.075;
    double ox = 0.0, oy = 0.0;
    int n_x = 1440, n_y = 1440;

    // n_x, n_y = round(extent / cell).
    static GridSpec from_ranges(std::array<double, 2> x, std::array<double, 2> y, std::array<double, 2> z,
                                std::array<double, 2> cell);

    // Same ranges, origin moved by half a cell in x and y.
    GridSpec shifted() const;

    double center_x(int ix) const { return x_min + ox + (ix + 0.5) * dx; }
    double center_y(int iy) const { return y_min + oy + (iy + 0.5) * dy; }
};

// Throws ConfigError naming the offending "grid.*" key.
void validate(const GridSpec& grid);

/// Virtual grid sizes: H_p vertical bins over the z range, T_p temporal bins over [0, 0.5) s.
struct StvSpec {
    int h_p = 8;
    int t_p = 10;
};

void validate(const StvSpec& stv);

struct CellCoord {
    std::int32_t ix = 0, iy = 0;
    friend auto operator<=>(const CellCoord&, const CellCoord&) = default;
};

struct StvIndex {
    std::int32_t ix = 0, iy = 0;  // base pillar
    std::int32_t sx = 0, sy = 0;  // shifted pillar
    std::int32_t v = 0;           // vertical bin
    std::int32_t t = 0;           // temporal bin
    bool in_range = false;
};

// Min edges inclusive, max edges exclusive. Points in the half-cell strip the
// shifted grid does not cover are clamped to its nearest cell.
StvIndex quantize_point(const Point& p, const GridSpec& grid, const StvSpec& stv);
std::vector<StvIndex> quantize(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv);

/// In-range points in canonical order: sorted by point content, ties by input
/// position. Any permutation of the input yields the same table contents.
struct PointTable {
    std::vector<Point> points;
    std::vector<StvIndex> index;
    std::vector<std::size_t> source;  // input position of each row
};

PointTable canonicalize(std::span<const Point> points, std::span<const StvIndex> index);

enum class GroupKey { pillar, pillar_vertical, pillar_temporal, shifted_pillar };

std::string to_string(GroupKey key);

/// Assignment of table rows to (cell, bin) segments. Cells are unique and
/// sorted; segment id = cell * bins + bin.
struct Grouping {
    GroupKey key = GroupKey::pillar;
    std::size_t bins = 1;
    std::vector<CellCoord> cells;
    std::vector<std::size_t> cell_of_row;
    std::vector<std::size_t> segment;
    std::vector<std::uint32_t> counts;             // per segment
    std::vector<std::array<double, 3>> mean_xyz;   // per segment, summed in row order

    std::size_t n_cells() const { return cells.size(); }
    std::size_t n_segments() const { return cells.size() * bins; }
    // [n_cells, bins], 1 where the segment holds a point.
    nd::Tensor mask() const;
};

Grouping make_grouping(const PointTable& table, GroupKey key, const StvSpec& stv);
// Takes cells and cell_of_row from an existing grouping of the same table on
// the same grid; only the bins differ.
Grouping make_grouping(const PointTable& table, GroupKey key, const StvSpec& stv, const Grouping& cells_from);

// Geometry the key's cells live on: the shifted grid for shifted_pillar.
GridSpec grid_for(GroupKey key, const GridSpec& grid);

struct GroupContext {
    CellCoord cell;
    std::size_t bin = 0;
    std::array<double, 3> mean{};  // segment mean of (x, y, z)
    double center_x = 0, center_y = 0;
};

// Width of the decorated per-point feature.
constexpr std::size_t kAugmentDim = 10;

// (x, y, z, r, dt, x - mean_x, y - mean_y, z - mean_z, x - center_x, y - center_y).
void augment_point(const Point& p, const GroupContext& ctx, std::span<double> out);

GroupContext context_of_row(const PointTable& table, const Grouping& grouping, const GridSpec& grid, std::size_t row);

// [rows, kAugmentDim] decorated features against each row's segment.
nd::Tensor augment(const PointTable& table, const Grouping& grouping, const GridSpec& grid);

/// Sparse (cell, feature) rows. Cells unique and sorted.
struct SparseFeatureSet {
    std::vector<CellCoord> cells;
    nd::Tensor feats;  // [N, C]
    int n_x = 0, n_y = 0;
};

struct GroupedFeatures {
    GroupKey key = GroupKey::pillar;
    std::vector<CellCoord> cells;
    nd::Tensor feats;  // [N, bins, C] for virtual-grid keys, [N, C] for pillar keys
    nd::Tensor mask;   // [N, bins]
    SparseFeatureSet sparse(const GridSpec& grid) const;
};

using FeatureFn = std::function<void(const Point&, const GroupContext&, std::span<double>)>;

// Pools feature_fn over every segment with the given mode. Empty bins of a
// non-empty cell are zero rows with mask 0.
GroupedFeatures group_pool(const PointTable& table, const Grouping& grouping, const GridSpec& grid,
                           nd::ReduceMode mode, std::size_t channels, const FeatureFn& feature_fn);

GroupedFeatures group_pool(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv, GroupKey key,
                           nd::ReduceMode mode, std::size_t channels, const FeatureFn& feature_fn);

// Dense [n_y, n_x, C] map, zeros outside the listed cells.
nd::Tensor scatter_to_bev(const SparseFeatureSet& sparse);
SparseFeatureSet gather_from_bev(const nd::Tensor& bev, std::span<const CellCoord> cells);

// Header u32 (n_x, n_y, C, N), then N int32 (ix, iy) pairs, then the
// row-major float64 payload; little-endian.
void save_sparse(const SparseFeatureSet& sparse, const std::string& path);
SparseFeatureSet load_sparse(const std::string& path);

}  // namespace fgpfe
