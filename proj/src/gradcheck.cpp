#include "fgpfe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fgpfe/error.hpp"
#include "fgpfe/random.hpp"

namespace fgpfe::nd {

namespace {

double evaluate(const GradGraph& graph, std::uint64_t& signature) {
    NoGradGuard no_grad;
    BranchSignature sig;
    const Var out = graph.forward();
    if (!std::isfinite(out.value().item())) throw NumericError(graph.name + ": non-finite forward output");
    signature = sig.value();
    return out.value().item();
}

}  // namespace

GradCheckReport fd_check(const GradGraph& graph, const GradCheckOptions& options) {
    GradCheckReport report;
    report.name = graph.name;
    auto params = graph.params;

    struct Coord {
        std::size_t param, index;
    };
    std::vector<Coord> coords;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].size(); ++i) coords.push_back({p, i});
    report.total = coords.size();
    if (coords.empty()) return report;

    if (coords.size() > options.max_coords) {
        Rng rng(options.seed);
        for (std::size_t i = 0; i < options.max_coords; ++i)
            std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
        coords.resize(options.max_coords);
    }

    for (auto& p : params) p.zero_grad();
    std::uint64_t base_signature = 0;
    {
        BranchSignature sig;
        const Var out = graph.forward();
        if (!std::isfinite(out.value().item())) throw NumericError(graph.name + ": non-finite forward output");
        base_signature = sig.value();
        backward(out);
    }
    std::vector<Tensor> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    for (const auto& c : coords) {
        double& v = params[c.param].value()[c.index];
        const double original = v;
        std::uint64_t sig_plus = 0, sig_minus = 0;
        v = original + options.step;
        const double f_plus = evaluate(graph, sig_plus);
        v = original - options.step;
        const double f_minus = evaluate(graph, sig_minus);
        v = original;
        if (sig_plus != base_signature || sig_minus != base_signature) {
            ++report.skipped;
            continue;
        }
        const double numeric = (f_plus - f_minus) / (2.0 * options.step);
        const double a = analytic[c.param][c.index];
        const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
        const double err = std::abs(a - numeric) / denom;
        ++report.checked;
        if (err > report.max_rel_error || !std::isfinite(err)) {
            report.max_rel_error = std::isfinite(err) ? err : INFINITY;
            report.worst = params[c.param].name() + "[" + std::to_string(c.index) + "]";
        }
    }
    const double sampled = static_cast<double>(coords.size());
    report.passed = report.max_rel_error < options.tolerance &&
                    static_cast<double>(report.skipped) <= options.max_skip_fraction * sampled;
    return report;
}

}  // namespace fgpfe::nd
