#include "fgpfe/fusion.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "fgpfe/binio.hpp"
#include "fgpfe/error.hpp"
#include "fgpfe/ops.hpp"
#include "fgpfe/optim.hpp"
#include "row_kernel.hpp"

namespace fgpfe {

void validate(const ApaConfig& cfg, std::size_t c_p) {
    if (cfg.c_f < 1 || cfg.c_f > c_p) throw ConfigError("model.c_f", "must be in [1, model.c_p]");
    if (cfg.reduction < 1 || (3 * cfg.c_f) % cfg.reduction != 0) throw ConfigError("model.r_a", "must divide 3 * model.c_f");
}

ApaState ApaState::make(const ApaConfig& cfg, const EncoderConfig& enc, Rng& rng) {
    validate(cfg, enc.c_p);
    const std::size_t wide = 3 * cfg.c_f;
    const std::size_t hidden = wide / cfg.reduction;
    ApaState s;
    s.reduce_v = Dense::make("apa.reduce_v", cfg.c_f, enc.c_p, true, false, rng);
    s.reduce_t = Dense::make("apa.reduce_t", cfg.c_f, enc.c_p, true, false, rng);
    s.reduce_h = Dense::make("apa.reduce_h", cfg.c_f, enc.c_p, true, false, rng);
    s.u0 = nd::Parameter("apa.u0", nd::uniform_init({hidden, wide}, wide, rng));
    s.u1 = nd::Parameter("apa.u1", nd::uniform_init({wide, hidden}, hidden, rng));
    s.psi = Dense::make("apa.psi", enc.c_p, wide, true, enc.psi_relu, rng);
    return s;
}

void ApaState::collect(std::vector<nd::Parameter>& out) const {
    reduce_v.collect(out);
    reduce_t.collect(out);
    reduce_h.collect(out);
    out.push_back(u0);
    out.push_back(u1);
    psi.collect(out);
}

AlignedBranches align_branches(const BranchRows& v, const BranchRows& t, const BranchRows& h, int n_x, int n_y) {
    AlignedBranches out;
    for (const BranchRows* b : {&v, &t, &h}) {
        if (b->feats.dim(0) != b->cells.size()) throw ShapeError("align_branches: row count differs from cell count");
        for (const auto& c : b->cells) {
            if (c.ix < 0 || c.ix >= n_x || c.iy < 0 || c.iy >= n_y) {
                throw ShapeError("align_branches: cell (" + std::to_string(c.ix) + ", " + std::to_string(c.iy) +
                                 ") outside the grid");
            }
        }
        if (!std::is_sorted(b->cells.begin(), b->cells.end()) ||
            std::adjacent_find(b->cells.begin(), b->cells.end()) != b->cells.end()) {
            throw ShapeError("align_branches: branch cells must be sorted and unique");
        }
    }
    if (v.cells == t.cells && v.cells == h.cells) {
        out.cells = v.cells;
    } else {
        std::vector<CellCoord> vt;
        std::set_union(v.cells.begin(), v.cells.end(), t.cells.begin(), t.cells.end(), std::back_inserter(vt));
        std::set_union(vt.begin(), vt.end(), h.cells.begin(), h.cells.end(), std::back_inserter(out.cells));
    }

    auto place = [&](const BranchRows& b) {
        if (b.cells == out.cells) return b.feats;
        std::vector<std::size_t> rows(b.cells.size());
        for (std::size_t i = 0; i < b.cells.size(); ++i) {
            rows[i] = static_cast<std::size_t>(std::lower_bound(out.cells.begin(), out.cells.end(), b.cells[i]) -
                                               out.cells.begin());
        }
        return nd::scatter_rows(b.feats, rows, out.cells.size());
    };
    out.v = place(v);
    out.t = place(t);
    out.h = place(h);
    return out;
}

nd::Var channel_wise_attention(const nd::Var& x, const ApaState& state) {
    const nd::Var gate = nd::sigmoid(nd::linear(nd::relu(nd::linear(x, state.u0)), state.u1));
    return nd::ewmul(x, gate);
}

nd::Var apa_forward(const nd::Var& v, const nd::Var& t, const nd::Var& h, const ApaState& state) {
    if (v.shape() != t.shape() || v.shape() != h.shape() || v.shape().size() != 2) {
        throw ShapeError("apa_forward: branches must share an [N, C] shape, got " + nd::shape_str(v.shape()) + ", " +
                         nd::shape_str(t.shape()) + ", " + nd::shape_str(h.shape()));
    }
    const nd::Var reduced[] = {state.reduce_v(v), state.reduce_t(t), state.reduce_h(h)};
    return state.psi(channel_wise_attention(nd::concat(reduced, 1), state));
}

nd::Tensor apa_encode(const nd::Tensor& v, const nd::Tensor& t, const nd::Tensor& h, const ApaState& state) {
    if (v.shape() != t.shape() || v.shape() != h.shape() || v.rank() != 2) {
        throw ShapeError("apa_encode: branches must share an [N, C] shape, got " + nd::shape_str(v.shape()) + ", " +
                         nd::shape_str(t.shape()) + ", " + nd::shape_str(h.shape()));
    }
    const RowKernel rv(state.reduce_v), rt(state.reduce_t), rh(state.reduce_h), psi(state.psi);
    const RowKernel u0(state.u0.value(), nullptr, true), u1(state.u1.value(), nullptr, false);
    const std::size_t n = v.dim(0), c = v.dim(1), cf = rv.out();
    nd::Tensor out({n, psi.out()});
    std::vector<double> x(3 * cf), hid(u0.out()), gate(3 * cf);
    for (std::size_t r = 0; r < n; ++r) {
        rv(v.data().data() + r * c, x.data());
        rt(t.data().data() + r * c, x.data() + cf);
        rh(h.data().data() + r * c, x.data() + 2 * cf);
        u0(x.data(), hid.data());
        u1(hid.data(), gate.data());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = x[j] * nd::logistic(gate[j]);
        psi(x.data(), out.data().data() + r * psi.out());
    }
    return out;
}

void save_bev(const nd::Tensor& bev, const std::string& path) {
    if (bev.rank() != 3) throw ShapeError("save_bev: expected [n_y, n_x, C], got " + nd::shape_str(bev.shape()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (std::size_t k = 0; k < 3; ++k) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bev.dim(k)));
    std::vector<float> row(bev.dim(2));
    const auto data = bev.data();
    for (std::size_t i = 0; i < data.size(); i += row.size()) {
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = binio::to_little(static_cast<float>(data[i + k]));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing " + path);
}

nd::Tensor load_bev(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    nd::Shape shape(3);
    for (auto& d : shape) d = binio::get<std::uint32_t>(in, "bev header");
    nd::Tensor bev(shape);
    for (auto& v : bev.data()) v = binio::get<float>(in, "bev payload");
    return bev;
}

}  // namespace fgpfe
