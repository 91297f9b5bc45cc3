#pragma once

#include <span>
#include <string>
#include <vector>

#include "fgpfe/autograd.hpp"
#include "fgpfe/random.hpp"

namespace fgpfe::nd {

// value -= lr * grad, then grad = 0.
void sgd_step(std::span<Parameter> params, double lr);

void zero_grads(std::span<Parameter> params);

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Binary checkpoint: "FGPC" magic, u32 version, u32 count, then per entry
// u32 name length, name bytes, u32 rank, u64 extents, float64 payload. All
// integers and floats little-endian.
void save_checkpoint(const std::string& path, std::span<const Parameter> params);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Copies checkpoint values into params by name; every param must be present
// with a matching shape.
void assign_checkpoint(std::span<Parameter> params, const std::vector<NamedTensor>& entries);

}  // namespace fgpfe::nd
