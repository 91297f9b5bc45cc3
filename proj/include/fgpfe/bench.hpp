#pragma once

#include <string>
#include <vector>

#include "fgpfe/pipeline.hpp"
#include "fgpfe/runconfig.hpp"

namespace fgpfe {

struct BenchReport {
    std::vector<StageTimes> runs;
    StageTimes mean;
    double total_mean = 0.0;
    double total_cv = 0.0;  // coefficient of variation of total time
    bool noisy = false;     // total_cv above 15 %
    std::size_t n_points = 0, n_in_range = 0;
    std::size_t n_pillars = 0, n_vertical = 0, n_temporal = 0;
    double points_per_second = 0.0;
    int threads = 1;
    std::string compiler, build_type;
};

// Background-heavy synthetic scene of roughly n_points points, 20 % on objects.
Scene bench_scene(std::size_t n_points, std::uint64_t seed, const SceneRange& range = {});

// Times encode_scene over `repeats` runs after one warm-up run.
BenchReport run_bench(const Scene& scene, const RunConfig& cfg, const FgPfeModel& model, std::size_t repeats);

std::string bench_json(const BenchReport& report);
std::string bench_table(const BenchReport& report);

}  // namespace fgpfe
