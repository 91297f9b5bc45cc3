#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fgpfe/encoders.hpp"
#include "fgpfe/ops.hpp"
#include "fgpfe/pcio.hpp"

namespace fgpfe {

// Rotates (x, y) into the box frame by -yaw; inside iff |u| <= l/2 and |v| <= w/2.
bool point_in_box_bev(double x, double y, const Box3D& box);

// 1 where the cell center lies in any box footprint.
std::vector<std::uint8_t> make_labels(std::span<const CellCoord> cells, const GridSpec& grid,
                                      std::span<const Box3D> boxes);

// One logistic head per branch: sigmoid(linear [1, c_p]).
struct ObjectnessHeads {
    Dense v, t, h;

    static ObjectnessHeads make(std::size_t c_p, Rng& rng);
    void collect(std::vector<nd::Parameter>& out) const;
};

// [N] foreground probabilities for branch rows [N, c_p].
nd::Var objectness_scores(const nd::Var& rows, const Dense& head);

// lambda * sum over branches of focal_loss(sigmoid(head_b(P_b)), labels).
nd::Var objectness_loss(const nd::Var& v, const nd::Var& t, const nd::Var& h, std::span<const std::uint8_t> labels,
                        const ObjectnessHeads& heads, double lambda_gl, const nd::FocalParams& focal = {});

// u32 N, N int32 (ix, iy) pairs, then ceil(N / 8) bytes of labels, LSB first.
void save_labels(std::span<const CellCoord> cells, std::span<const std::uint8_t> labels, const std::string& path);
std::pair<std::vector<CellCoord>, std::vector<std::uint8_t>> load_labels(const std::string& path);

}  // namespace fgpfe
