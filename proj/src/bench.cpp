#include "fgpfe/bench.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "fgpfe/autograd.hpp"
#include "fgpfe/error.hpp"

namespace fgpfe {

namespace {

constexpr std::pair<const char*, double StageTimes::*> kStages[] = {
    {"quantize", &StageTimes::quantize}, {"group", &StageTimes::group},   {"encode_v", &StageTimes::encode_v},
    {"encode_t", &StageTimes::encode_t}, {"encode_h", &StageTimes::encode_h}, {"fuse", &StageTimes::fuse},
    {"scatter", &StageTimes::scatter}};

}  // namespace

Scene bench_scene(std::size_t n_points, std::uint64_t seed, const SceneRange& range) {
    SceneParams p;
    p.seed = seed;
    p.n_boxes = 40;
    p.points_per_box = std::max<std::size_t>(1, n_points / 5 / p.n_boxes);
    p.background_points = n_points - p.n_boxes * p.points_per_box;
    p.sweeps = 10;
    return gen_scene(p, range);
}

BenchReport run_bench(const Scene& scene, const RunConfig& cfg, const FgPfeModel& model, std::size_t repeats) {
    if (repeats == 0) throw ConfigError("repeats", "must be >= 1");
    BenchReport r;
    r.threads = nd::num_threads();
#ifdef __VERSION__
    r.compiler = __VERSION__;
#endif
#ifdef NDEBUG
    r.build_type = "release";
#else
    r.build_type = "debug";
#endif
    r.n_points = scene.points.size();
    {
        const auto prepared = prepare_scene(scene.points, cfg.grid, model.stv);
        r.n_in_range = prepared.table.points.size();
        r.n_pillars = prepared.pillar.n_cells();
        r.n_vertical = prepared.vertical.n_cells();
        r.n_temporal = prepared.temporal.n_cells();
    }
    encode_scene(scene.points, cfg.grid, model);
    for (std::size_t i = 0; i < repeats; ++i) {
        StageTimes t;
        encode_scene(scene.points, cfg.grid, model, &t);
        r.runs.push_back(t);
    }
    const double n = static_cast<double>(repeats);
    for (const auto& t : r.runs)
        for (const auto& [name, field] : kStages) r.mean.*field += t.*field / n;
    r.total_mean = r.mean.total();
    double var = 0.0;
    for (const auto& t : r.runs) var += (t.total() - r.total_mean) * (t.total() - r.total_mean) / n;
    r.total_cv = r.total_mean > 0 ? std::sqrt(var) / r.total_mean : 0.0;
    r.noisy = r.total_cv > 0.15;
    r.points_per_second = r.total_mean > 0 ? static_cast<double>(r.n_points) / r.total_mean : 0.0;
    return r;
}

std::string bench_json(const BenchReport& r) {
    nlohmann::json j;
    for (const auto& [name, field] : kStages) j["mean_seconds"][name] = r.mean.*field;
    j["mean_seconds"]["total"] = r.total_mean;
    for (const auto& t : r.runs) {
        nlohmann::json run;
        for (const auto& [name, field] : kStages) run[name] = t.*field;
        run["total"] = t.total();
        j["runs"].push_back(run);
    }
    j["total_cv"] = r.total_cv;
    j["noisy"] = r.noisy;
    j["points"] = r.n_points;
    j["points_in_range"] = r.n_in_range;
    j["N_p"] = r.n_pillars;
    j["N_vp"] = r.n_vertical;
    j["N_tp"] = r.n_temporal;
    j["points_per_second"] = r.points_per_second;
    j["env"] = {{"threads", r.threads}, {"compiler", r.compiler}, {"build", r.build_type}};
    return j.dump(2) + "\n";
}

std::string bench_table(const BenchReport& r) {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof buf, "points %zu (in range %zu)  N_p %zu  N_vp %zu  N_tp %zu\n", r.n_points, r.n_in_range,
                  r.n_pillars, r.n_vertical, r.n_temporal);
    os << buf;
    for (const auto& [name, field] : kStages) {
        const double v = r.mean.*field;
        std::snprintf(buf, sizeof buf, "  %-10s %9.4f s  %5.1f %%\n", name, v,
                      r.total_mean > 0 ? 100.0 * v / r.total_mean : 0.0);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-10s %9.4f s  (cv %.1f %%, %.3g points/s, %d thread%s)\n", "total", r.total_mean,
                  100.0 * r.total_cv, r.points_per_second, r.threads, r.threads == 1 ? "" : "s");
    os << buf;
    if (r.noisy) os << "warning: run-to-run variation above 15 %\n";
    return os.str();
}

}  // namespace fgpfe
