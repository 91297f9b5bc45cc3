#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fgpfe/autograd.hpp"
#include "fgpfe/gridding.hpp"
#include "fgpfe/random.hpp"

namespace fgpfe {

/// Linear layer with optional bias and ReLU.
struct Dense {
    nd::Parameter weight;  // [out, in]
    nd::Parameter bias;    // [out], may be undefined
    bool relu = false;

    // Weight uniform in +-1/sqrt(in), zero bias.
    static Dense make(const std::string& name, std::size_t out, std::size_t in, bool with_bias, bool relu, Rng& rng);

    nd::Var operator()(const nd::Var& x) const;
    std::size_t in_features() const { return weight.shape()[1]; }
    std::size_t out_features() const { return weight.shape()[0]; }
    void collect(std::vector<nd::Parameter>& out) const;
};

struct EncoderConfig {
    std::size_t c_p = 32;      // pillar channel width
    std::size_t reduction = 4; // channel-attention hidden width is c_p / reduction
    std::size_t conv_k = 7;    // vertical-attention filter size
    bool psi_relu = true;      // psi layers: linear + ReLU, or linear only
};

void validate(const EncoderConfig& cfg);

// Vertical encoder: point lift, channel attention (w0, w1), vertical
// attention filter, and the psi projection from h_p * c_p back to c_p.
struct VpfeState {
    Dense lift;           // kAugmentDim -> c_p, ReLU
    nd::Parameter w0;     // [c_p / r, c_p]
    nd::Parameter w1;     // [c_p, c_p / r]
    nd::Parameter conv;   // [1, 2, K]
    Dense psi;            // h_p * c_p -> c_p
    std::size_t h_p = 0;

    static VpfeState make(const EncoderConfig& cfg, std::size_t h_p, Rng& rng);
    void collect(std::vector<nd::Parameter>& out) const;
};

struct TpfeState {
    Dense lift;
    Dense psi;  // t_p * c_p -> c_p
    std::size_t t_p = 0;

    static TpfeState make(const EncoderConfig& cfg, std::size_t t_p, Rng& rng);
    void collect(std::vector<nd::Parameter>& out) const;
};

struct HpfeState {
    Dense lift_base;
    Dense lift_shifted;
    Dense psi;  // 2 * c_p -> c_p

    static HpfeState make(const EncoderConfig& cfg, Rng& rng);
    void collect(std::vector<nd::Parameter>& out) const;
};

// Lifts each row's decorated features and mean-pools them per (cell, bin):
// [n_cells, bins, c_p], zero rows for empty bins.
nd::Var pool_bins(const nd::Tensor& augmented, const Grouping& grouping, const Dense& lift);

// Channel attention sigma(W1 relu(W0 avg) + W1 relu(W0 max)), pooling over
// the vertical axis of P [N, H, C]. Returns [N, 1, C].
nd::Var channel_attention(const nd::Var& p, const VpfeState& state);

// sigma(conv(concat(avg_c, max_c))) over the channel axis of P [N, H, C],
// convolved along H. Returns [N, H, 1].
nd::Var vertical_attention(const nd::Var& p, const VpfeState& state);

// P'' = M_v(P') * P' with P' = M_c(P) * P, re-masked to occupied bins.
nd::Var vgam(const nd::Var& p, const nd::Tensor& mask, const VpfeState& state);

// psi(reshape(vgam(P), [N, H * C])) -> [N, C].
nd::Var vpfe_forward(const nd::Var& p, const nd::Tensor& mask, const VpfeState& state);

// psi(reshape(P, [N, T * C])) -> [N, C].
nd::Var tpfe_forward(const nd::Var& p, const TpfeState& state);

// Horizontal encoder over the canonical table. Rows of the result follow
// base.cells.
nd::Var hpfe_forward(const PointTable& table, const Grouping& base, const Grouping& shifted, const GridSpec& grid,
                     const HpfeState& state);

// Inference-only encoders. They stream one pillar at a time instead of
// building the dense [N, bins, C] tensors, and accumulate in the same order as
// the graph versions above.
nd::Tensor vpfe_encode(const PointTable& table, const Grouping& vertical, const GridSpec& grid, const VpfeState& state);
nd::Tensor tpfe_encode(const PointTable& table, const Grouping& temporal, const GridSpec& grid, const TpfeState& state);
nd::Tensor hpfe_encode(const PointTable& table, const Grouping& base, const Grouping& shifted, const GridSpec& grid,
                       const HpfeState& state);

SparseFeatureSet hpfe_forward(std::span<const Point> points, std::span<const StvIndex> index, const GridSpec& grid,
                              const StvSpec& stv, const HpfeState& state);

}  // namespace fgpfe
