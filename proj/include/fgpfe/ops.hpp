#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fgpfe/autograd.hpp"

// Differentiable layer primitives. Every op sums in a fixed index order, so
// equal inputs give bit-identical outputs regardless of thread count.
namespace fgpfe::nd {

enum class ReduceMode { mean, max };

// y[..., j] = sum_i w[j, i] * x[..., i] + b[j]. Pass an undefined Var for no bias.
Var linear(const Var& x, const Var& weight, const Var& bias = Var{});

// Cross-correlation along the second-to-last axis of x [..., L, C_in] with a
// kernel [C_out, C_in, K]; K odd, zero padding (K - 1) / 2, output [..., L, C_out].
Var conv1d(const Var& x, const Var& kernel);

// Mean or max along one axis. Max routes gradient to the first maximal index.
Var reduce(const Var& x, std::size_t axis, ReduceMode mode, bool keepdim = false);

Var sigmoid(const Var& x);
// Overflow-safe 1 / (1 + exp(-x)); the scalar used by sigmoid().
double logistic(double x);
Var relu(const Var& x);

// Elementwise binary ops. Operands share rank; any extent may be 1 and is
// broadcast against the other operand.
Var ewmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);

// Row ops treat axis 0 as the row axis.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
// Places row m of x at output row rows[m]; remaining rows are zero. Duplicate targets are rejected.
Var scatter_rows(const Var& x, std::span<const std::size_t> rows, std::size_t n_out);
// Pools rows sharing a segment id, visiting rows in order. Empty segments yield zeros.
Var segment_reduce(const Var& x, std::span<const std::size_t> segment, std::size_t n_segments, ReduceMode mode);

Var sum(const Var& x);
Var weighted_sum(const Var& x, const Tensor& weights);

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
    double eps = 1e-6;
};

// Mean over elements of -a_t (1 - p_t)^gamma log(p_t), with p clamped to [eps, 1 - eps].
Var focal_loss(const Var& prob, const Tensor& target, const FocalParams& params = {});

// Plain forward of the focal term for a single element; shared by tests and metrics.
double focal_term(double p, double y, const FocalParams& params);

}  // namespace fgpfe::nd
