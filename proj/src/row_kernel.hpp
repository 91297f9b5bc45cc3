#pragma once

#include <cstddef>
#include <vector>

#include "fgpfe/encoders.hpp"

namespace fgpfe {

// y = W x (+ b), summed like nd::linear: bias first, then ascending inputs,
// zero inputs skipped.
class RowKernel {
public:
    RowKernel(const nd::Tensor& weight, const nd::Parameter* bias, bool relu)
        : out_(weight.dim(0)), in_(weight.dim(1)), wt_(in_ * out_), relu_(relu) {
        for (std::size_t j = 0; j < out_; ++j)
            for (std::size_t i = 0; i < in_; ++i) wt_[i * out_ + j] = weight[j * in_ + i];
        if (bias && bias->defined()) bias_ = bias->value().data().data();
    }
    explicit RowKernel(const Dense& d) : RowKernel(d.weight.value(), &d.bias, d.relu) {}

    __attribute__((target_clones("avx2", "default"))) void operator()(const double* __restrict x,
                                                                      double* __restrict y) const {
        const std::size_t out = out_;
        for (std::size_t j = 0; j < out; ++j) y[j] = bias_ ? bias_[j] : 0.0;
        for (std::size_t i = 0; i < in_; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            const double* __restrict w = wt_.data() + i * out;
            for (std::size_t j = 0; j < out; ++j) y[j] += xi * w[j];
        }
        if (relu_)
            for (std::size_t j = 0; j < out_; ++j) y[j] = y[j] > 0.0 ? y[j] : 0.0;
    }

    std::size_t out() const { return out_; }

private:
    std::size_t out_, in_;
    std::vector<double> wt_;
    const double* bias_ = nullptr;
    bool relu_;
};

}  // namespace fgpfe
