#include "fgpfe/pipeline.hpp"

#include <chrono>

#include "fgpfe/error.hpp"

namespace fgpfe {

namespace {

class StageClock {
public:
    explicit StageClock(double* sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
    ~StageClock() {
        if (sink_) *sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    double* sink_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

FgPfeModel FgPfeModel::init(const EncoderConfig& enc, const ApaConfig& apa, const StvSpec& stv, std::uint64_t seed) {
    validate(enc);
    validate(apa, enc.c_p);
    validate(stv);
    Rng rng(seed);
    FgPfeModel m;
    m.enc = enc;
    m.apa_cfg = apa;
    m.stv = stv;
    m.vpfe = VpfeState::make(enc, static_cast<std::size_t>(stv.h_p), rng);
    m.tpfe = TpfeState::make(enc, static_cast<std::size_t>(stv.t_p), rng);
    m.hpfe = HpfeState::make(enc, rng);
    m.apa = ApaState::make(apa, enc, rng);
    m.heads = ObjectnessHeads::make(enc.c_p, rng);
    return m;
}

std::vector<nd::Parameter> FgPfeModel::parameters() const {
    std::vector<nd::Parameter> out;
    vpfe.collect(out);
    tpfe.collect(out);
    hpfe.collect(out);
    apa.collect(out);
    heads.collect(out);
    return out;
}

std::vector<StvIndex> quantize_stage(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv) {
    return quantize(points, grid, stv);
}

PreparedScene group_stage(std::span<const Point> points, std::span<const StvIndex> index, const GridSpec& grid,
                          const StvSpec& stv) {
    PreparedScene s;
    s.grid = grid;
    s.stv = stv;
    s.table = canonicalize(points, index);
    s.pillar = make_grouping(s.table, GroupKey::pillar, stv);
    s.vertical = make_grouping(s.table, GroupKey::pillar_vertical, stv, s.pillar);
    s.temporal = make_grouping(s.table, GroupKey::pillar_temporal, stv, s.pillar);
    s.shifted = make_grouping(s.table, GroupKey::shifted_pillar, stv);
    return s;
}

PreparedScene prepare_scene(std::span<const Point> points, const GridSpec& grid, const StvSpec& stv) {
    const auto index = quantize_stage(points, grid, stv);
    return group_stage(points, index, grid, stv);
}

BranchRows encode_vertical(const PreparedScene& scene, const VpfeState& state) {
    const nd::Var p = pool_bins(augment(scene.table, scene.vertical, scene.grid), scene.vertical, state.lift);
    return {scene.vertical.cells, vpfe_forward(p, scene.vertical.mask(), state)};
}

BranchRows encode_temporal(const PreparedScene& scene, const TpfeState& state) {
    const nd::Var p = pool_bins(augment(scene.table, scene.temporal, scene.grid), scene.temporal, state.lift);
    return {scene.temporal.cells, tpfe_forward(p, state)};
}

BranchRows encode_horizontal(const PreparedScene& scene, const HpfeState& state) {
    return {scene.pillar.cells, hpfe_forward(scene.table, scene.pillar, scene.shifted, scene.grid, state)};
}

AlignedBranches encode_branches(const PreparedScene& scene, const FgPfeModel& model) {
    return align_branches(encode_vertical(scene, model.vpfe), encode_temporal(scene, model.tpfe),
                          encode_horizontal(scene, model.hpfe), scene.grid.n_x, scene.grid.n_y);
}

EncodeOutput encode_scene(std::span<const Point> points, const GridSpec& grid, const FgPfeModel& model,
                          StageTimes* times) {
    nd::NoGradGuard no_grad;
    StageTimes local;
    StageTimes& t = times ? *times : local;
    std::vector<StvIndex> index;
    {
        StageClock c(&t.quantize);
        index = quantize_stage(points, grid, model.stv);
    }
    PreparedScene scene;
    {
        StageClock c(&t.group);
        scene = group_stage(points, index, grid, model.stv);
    }
    BranchRows v, tt, h;
    {
        StageClock c(&t.encode_v);
        v = {scene.vertical.cells, nd::Var::constant(vpfe_encode(scene.table, scene.vertical, grid, model.vpfe))};
    }
    {
        StageClock c(&t.encode_t);
        tt = {scene.temporal.cells, nd::Var::constant(tpfe_encode(scene.table, scene.temporal, grid, model.tpfe))};
    }
    {
        StageClock c(&t.encode_h);
        h = {scene.pillar.cells,
             nd::Var::constant(hpfe_encode(scene.table, scene.pillar, scene.shifted, grid, model.hpfe))};
    }
    EncodeOutput out;
    {
        StageClock c(&t.fuse);
        auto aligned = align_branches(v, tt, h, grid.n_x, grid.n_y);
        out.pillar_features = apa_encode(aligned.v.value(), aligned.t.value(), aligned.h.value(), model.apa);
        out.cells = std::move(aligned.cells);
    }
    {
        StageClock c(&t.scatter);
        out.bev = scatter_to_bev({out.cells, out.pillar_features, grid.n_x, grid.n_y});
    }
    return out;
}

nd::Tensor full_encode(std::span<const Point> points, const GridSpec& grid, const FgPfeModel& model,
                       StageTimes* times) {
    return encode_scene(points, grid, model, times).bev;
}

}  // namespace fgpfe
