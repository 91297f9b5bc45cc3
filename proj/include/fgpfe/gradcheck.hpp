#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fgpfe/autograd.hpp"

namespace fgpfe::nd {

// A scalar-valued computation over a fixed parameter list. forward() must
// rebuild the graph from the current parameter values on every call.
struct GradGraph {
    std::string name;
    std::vector<Parameter> params;
    std::function<Var()> forward;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-5;
    // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
    double abs_floor = 1e-3;
    std::size_t max_coords = 10000;
    std::uint64_t seed = 0;
    // Coordinates whose +-step probe crosses a ReLU/max/clamp branch are
    // skipped; more than this fraction of skips fails the check.
    double max_skip_fraction = 0.1;
};

struct GradCheckReport {
    std::string name;
    std::size_t total = 0;    // parameter coordinates in the graph
    std::size_t checked = 0;  // coordinates compared
    std::size_t skipped = 0;  // coordinates straddling a non-smooth branch
    double max_rel_error = 0.0;
    std::string worst;  // "param[index]" of the largest error
    bool passed = true;
};

// Compares backward() gradients with central differences for every parameter
// coordinate (a seeded sample of max_coords when there are more).
GradCheckReport fd_check(const GradGraph& graph, const GradCheckOptions& options = {});

}  // namespace fgpfe::nd
