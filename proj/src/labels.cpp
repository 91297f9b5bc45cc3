#include "fgpfe/labels.hpp"

#include <cmath>
#include <fstream>

#include "fgpfe/binio.hpp"
#include "fgpfe/error.hpp"

namespace fgpfe {

bool point_in_box_bev(double x, double y, const Box3D& box) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    const double dx = x - box.cx, dy = y - box.cy;
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return std::abs(u) <= 0.5 * box.l && std::abs(v) <= 0.5 * box.w;
}

std::vector<std::uint8_t> make_labels(std::span<const CellCoord> cells, const GridSpec& grid,
                                      std::span<const Box3D> boxes) {
    std::vector<std::uint8_t> labels(cells.size(), 0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const double x = grid.center_x(cells[i].ix);
        const double y = grid.center_y(cells[i].iy);
        for (const auto& b : boxes) {
            if (point_in_box_bev(x, y, b)) {
                labels[i] = 1;
                break;
            }
        }
    }
    return labels;
}

ObjectnessHeads ObjectnessHeads::make(std::size_t c_p, Rng& rng) {
    ObjectnessHeads h;
    h.v = Dense::make("head.v", 1, c_p, true, false, rng);
    h.t = Dense::make("head.t", 1, c_p, true, false, rng);
    h.h = Dense::make("head.h", 1, c_p, true, false, rng);
    return h;
}

void ObjectnessHeads::collect(std::vector<nd::Parameter>& out) const {
    v.collect(out);
    t.collect(out);
    h.collect(out);
}

nd::Var objectness_scores(const nd::Var& rows, const Dense& head) {
    const nd::Var logits = head(rows);
    return nd::sigmoid(nd::reshape(logits, {logits.dim(0)}));
}

nd::Var objectness_loss(const nd::Var& v, const nd::Var& t, const nd::Var& h, std::span<const std::uint8_t> labels,
                        const ObjectnessHeads& heads, double lambda_gl, const nd::FocalParams& focal) {
    nd::Tensor target({labels.size()});
    for (std::size_t i = 0; i < labels.size(); ++i) target[i] = labels[i] ? 1.0 : 0.0;
    for (const nd::Var* b : {&v, &t, &h}) {
        if (b->shape().size() != 2 || b->dim(0) != labels.size()) {
            throw ShapeError("objectness_loss: branch " + nd::shape_str(b->shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
        }
    }
    const nd::Var lv = nd::focal_loss(objectness_scores(v, heads.v), target, focal);
    const nd::Var lt = nd::focal_loss(objectness_scores(t, heads.t), target, focal);
    const nd::Var lh = nd::focal_loss(objectness_scores(h, heads.h), target, focal);
    return nd::scale(nd::add(nd::add(lv, lt), lh), lambda_gl);
}

void save_labels(std::span<const CellCoord> cells, std::span<const std::uint8_t> labels, const std::string& path) {
    if (cells.size() != labels.size()) throw ShapeError("save_labels: cell and label counts differ");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(cells.size()));
    for (const auto& c : cells) {
        binio::put<std::int32_t>(out, c.ix);
        binio::put<std::int32_t>(out, c.iy);
    }
    std::vector<std::uint8_t> bits((labels.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    if (!out) throw IoError("failed writing " + path);
}

std::pair<std::vector<CellCoord>, std::vector<std::uint8_t>> load_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    const std::size_t n = binio::get<std::uint32_t>(in, "labels header");
    std::vector<CellCoord> cells(n);
    for (auto& c : cells) {
        c.ix = binio::get<std::int32_t>(in, "labels coords");
        c.iy = binio::get<std::int32_t>(in, "labels coords");
    }
    std::vector<std::uint8_t> bits((n + 7) / 8);
    if (!in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size())))
        throw FormatError("truncated labels payload");
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = (bits[i / 8] >> (i % 8)) & 1u;
    return {std::move(cells), std::move(labels)};
}

}  // namespace fgpfe
