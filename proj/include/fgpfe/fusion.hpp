#pragma once

#include <span>
#include <string>
#include <vector>

#include "fgpfe/encoders.hpp"

namespace fgpfe {

struct ApaConfig {
    std::size_t c_f = 16;      // per-branch reduced width, <= c_p
    std::size_t reduction = 4; // CWA hidden width is 3 * c_f / reduction
};

void validate(const ApaConfig& cfg, std::size_t c_p);

// Attentive pillar aggregation: per-branch reduction c_p -> c_f, row-wise
// squeeze-excitation gate over the 3 * c_f concatenation, psi back to c_p.
struct ApaState {
    Dense reduce_v, reduce_t, reduce_h;
    nd::Parameter u0;  // [3 c_f / r_a, 3 c_f]
    nd::Parameter u1;  // [3 c_f, 3 c_f / r_a]
    Dense psi;         // 3 c_f -> c_p

    static ApaState make(const ApaConfig& cfg, const EncoderConfig& enc, Rng& rng);
    void collect(std::vector<nd::Parameter>& out) const;
};

struct BranchRows {
    std::vector<CellCoord> cells;  // sorted, unique
    nd::Var feats;                 // [cells.size(), C]
};

struct AlignedBranches {
    std::vector<CellCoord> cells;  // sorted union
    nd::Var v, t, h;               // [cells.size(), C], zero rows where a branch lacks the cell
};

AlignedBranches align_branches(const BranchRows& v, const BranchRows& t, const BranchRows& h, int n_x, int n_y);

// x * sigma(U1 relu(U0 x)), each row gated by itself.
nd::Var channel_wise_attention(const nd::Var& x, const ApaState& state);

nd::Var apa_forward(const nd::Var& v, const nd::Var& t, const nd::Var& h, const ApaState& state);

// Row-at-a-time inference version of apa_forward with the same summation order.
nd::Tensor apa_encode(const nd::Tensor& v, const nd::Tensor& t, const nd::Tensor& h, const ApaState& state);

// Header u32 (n_y, n_x, C), then the row-major payload as little-endian float32.
void save_bev(const nd::Tensor& bev, const std::string& path);
nd::Tensor load_bev(const std::string& path);

}  // namespace fgpfe
