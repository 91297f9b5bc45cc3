#pragma once

#include <cstdint>
#include <vector>

#include "fgpfe/gradcheck.hpp"
#include "fgpfe/runconfig.hpp"

namespace fgpfe {

// A few dozen points packed into a 5 x 5 block of pillars near the grid
// center, spread over the full z range and sweep window.
Scene grad_patch_scene(const GridSpec& grid, std::size_t n_points, std::uint64_t seed);

// Gradient graphs for every differentiable layer op and for the full V, T, H,
// APA and objectness-loss graphs, built from cfg's model sizes on a patch scene.
std::vector<nd::GradGraph> gradient_suite(const RunConfig& cfg, std::uint64_t seed);

std::vector<nd::GradCheckReport> run_gradient_suite(const RunConfig& cfg, const nd::GradCheckOptions& options,
                                                    std::uint64_t seed);

}  // namespace fgpfe
