#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fgpfe/encoders.hpp"
#include "fgpfe/fusion.hpp"
#include "fgpfe/gridding.hpp"
#include "fgpfe/labels.hpp"

namespace fgpfe {

/// Every trainable state of the encoder stack.
struct FgPfeModel {
    EncoderConfig enc;
    ApaConfig apa_cfg;
    StvSpec stv;
    VpfeState vpfe;
    TpfeState tpfe;
    HpfeState hpfe;
    ApaState apa;
    ObjectnessHeads heads;

    static FgPfeModel init(const EncoderConfig& enc, const ApaConfig& apa, const StvSpec& stv, std::uint64_t seed);
    std::vector<nd::Parameter> parameters() const;
};

/// Quantized and grouped scene; independent of model parameters.
struct PreparedScene {
    GridSpec grid;
    StvSpec stv;
    PointTable table;
    Grouping pillar, vertical, temporal, shifted;
};

std::vector<StvIndex> quantize_stage(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv);
PreparedScene group_stage(std::span<const Point> points, std::span<const StvIndex> index, const GridSpec& grid,
                          const StvSpec& stv);
PreparedScene prepare_scene(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv);

BranchRows encode_vertical(const PreparedScene& scene, const VpfeState& state);
BranchRows encode_temporal(const PreparedScene& scene, const TpfeState& state);
BranchRows encode_horizontal(const PreparedScene& scene, const HpfeState& state);

AlignedBranches encode_branches(const PreparedScene& scene, const FgPfeModel& model);

struct StageTimes {
    double quantize = 0, group = 0, encode_v = 0, encode_t = 0, encode_h = 0, fuse = 0, scatter = 0;
    double total() const { return quantize + group + encode_v + encode_t + encode_h + fuse + scatter; }
};

struct EncodeOutput {
    std::vector<CellCoord> cells;
    nd::Tensor pillar_features;  // [N, c_p]
    nd::Tensor bev;              // [n_y, n_x, c_p]
};

// quantize -> group -> V/T/H encoders -> align -> APA -> scatter. Runs without
// gradient recording. Stage wall times are written to `times` when given.
EncodeOutput encode_scene(std::span<const Point> points, const GridSpec& grid, const FgPfeModel& model,
                          StageTimes* times = nullptr);

nd::Tensor full_encode(std::span<const Point> points, const GridSpec& grid, const FgPfeModel& model,
                       StageTimes* times = nullptr);

}  // namespace fgpfe
