// fgpfe: scene generation, encoding, benchmarking, gradient checks and toy
// training from the command line.
//
// exit codes: 0 ok, 2 bad configuration or arguments, 3 file errors,
// 4 a verification step failed, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fgpfe/bench.hpp"
#include "fgpfe/checks.hpp"
#include "fgpfe/error.hpp"
#include "fgpfe/optim.hpp"
#include "fgpfe/pipeline.hpp"
#include "fgpfe/runconfig.hpp"
#include "fgpfe/train.hpp"

namespace {

using namespace fgpfe;

constexpr int kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kVerify = 4;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out;
    std::string scene, params;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.threads) cfg.threads = *c.threads;
    if (c.seed) {
        cfg.training.seed = *c.seed;
        cfg.scene.seed = *c.seed;
    }
    if (!c.out.empty()) cfg.paths.out = c.out;
    if (!c.scene.empty()) cfg.paths.scene = c.scene;
    if (!c.params.empty()) cfg.paths.params = c.params;
    validate(cfg);
    nd::set_num_threads(cfg.threads);
    return cfg;
}

SceneRange range_of(const GridSpec& g) {
    return {g.x_min, g.x_max, g.y_min, g.y_max, g.z_min, g.z_max};
}

std::string require_path(const std::string& value, const char* key) {
    if (value.empty()) throw ConfigError(key, "no path given");
    return value;
}

Scene load_or_generate(const RunConfig& cfg) {
    if (cfg.paths.scene.empty()) return gen_scene(cfg.scene, range_of(cfg.grid));
    auto loaded = load_scene(cfg.paths.scene);
    if (loaded.dropped) std::fprintf(stderr, "dropped %zu invalid points\n", loaded.dropped);
    return std::move(loaded.scene);
}

FgPfeModel model_for(const RunConfig& cfg) {
    FgPfeModel model = FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, cfg.training.seed);
    if (!cfg.paths.params.empty()) {
        auto params = model.parameters();
        nd::assign_checkpoint(params, nd::load_checkpoint(cfg.paths.params));
    }
    return model;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("failed writing " + path);
}

int cmd_gen_scene(const Common& c, const SceneParams& overrides, bool have_overrides) {
    RunConfig cfg = resolve(c);
    if (have_overrides) {
        const auto seed = cfg.scene.seed;
        cfg.scene = overrides;
        cfg.scene.seed = c.seed ? *c.seed : seed;
    }
    const std::string out = require_path(cfg.paths.out, "paths.out");
    const Scene scene = gen_scene(cfg.scene, range_of(cfg.grid));
    save_scene(scene, out);
    std::printf("%zu points, %zu boxes -> %s\n", scene.points.size(), scene.boxes.size(), out.c_str());
    return kOk;
}

int cmd_encode(const Common& c, const std::string& sparse_path, const std::string& labels_path) {
    const RunConfig cfg = resolve(c);
    const std::string out = require_path(cfg.paths.out, "paths.out");
    const Scene scene = load_or_generate(cfg);
    const FgPfeModel model = model_for(cfg);
    StageTimes t;
    const EncodeOutput enc = encode_scene(scene.points, cfg.grid, model, &t);
    save_bev(enc.bev, out);
    if (!sparse_path.empty()) save_sparse({enc.cells, enc.pillar_features, cfg.grid.n_x, cfg.grid.n_y}, sparse_path);
    if (!labels_path.empty()) save_labels(enc.cells, make_labels(enc.cells, cfg.grid, scene.boxes), labels_path);
    std::printf("%zu points, %zu pillars, BEV [%zu, %zu, %zu] in %.3f s -> %s\n", scene.points.size(), enc.cells.size(),
                enc.bev.dim(0), enc.bev.dim(1), enc.bev.dim(2), t.total(), out.c_str());
    return kOk;
}

int cmd_bench(const Common& c, std::size_t repeats, std::size_t n_points) {
    const RunConfig cfg = resolve(c);
    const Scene scene = cfg.paths.scene.empty() ? bench_scene(n_points, cfg.scene.seed, range_of(cfg.grid))
                                                : load_or_generate(cfg);
    const FgPfeModel model = model_for(cfg);
    const BenchReport report = run_bench(scene, cfg, model, repeats);
    std::cout << bench_table(report);
    if (!cfg.paths.out.empty()) write_text(cfg.paths.out, bench_json(report));
    return kOk;
}

int cmd_check_grad(const Common& c) {
    const RunConfig cfg = resolve(c);
    nd::GradCheckOptions options;
    options.seed = cfg.training.seed;
    bool ok = true;
    for (const auto& r : run_gradient_suite(cfg, options, cfg.training.seed)) {
        std::printf("%-4s %-22s coords %6zu checked %6zu skipped %4zu max rel err %.3e%s%s\n", r.passed ? "ok" : "FAIL",
                    r.name.c_str(), r.total, r.checked, r.skipped, r.max_rel_error, r.worst.empty() ? "" : " at ",
                    r.worst.c_str());
        ok = ok && r.passed;
    }
    return ok ? kOk : kVerify;
}

int cmd_train_toy(const Common& c, const std::string& curve_path, std::optional<std::size_t> steps,
                  std::optional<double> lr, bool check) {
    RunConfig cfg = resolve(c);
    if (steps) cfg.training.steps = *steps;
    if (lr) cfg.training.lr = *lr;
    validate(cfg);
    const std::string out = require_path(cfg.paths.out, "paths.out");
    const Scene scene = load_or_generate(cfg);
    FgPfeModel model = model_for(cfg);
    const TrainResult r = train_toy(scene, cfg, model);
    const auto params = model.parameters();
    nd::save_checkpoint(out, params);
    save_loss_curve(r, curve_path.empty() ? out + ".loss.csv" : curve_path);
    const double ratio = r.initial_loss > 0 ? r.final_loss / r.initial_loss : 0.0;
    std::printf("%zu steps: loss %.6g -> %.6g (ratio %.4f), ROC-AUC %.4f over %zu pillars (%zu positive), %.1f s\n",
                cfg.training.steps, r.initial_loss, r.final_loss, ratio, r.auc, r.n_pillars, r.n_positive, r.seconds);
    if (check && !(ratio < 0.1 && r.auc > 0.9)) return kVerify;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-grained pillar feature encoding"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config, "JSON run configuration");
        sub->add_option("--seed", common.seed, "overrides training.seed and scene.seed");
        sub->add_option("--threads", common.threads, "worker threads");
        sub->add_option("-o,--out", common.out, "output path");
    };

    auto* gen = app.add_subcommand("gen-scene", "write a synthetic scene (points + .json sidecar)");
    add_common(gen);
    SceneParams sp;
    bool have_sp = false;
    gen->add_option("--boxes", sp.n_boxes)->each([&](const std::string&) { have_sp = true; });
    gen->add_option("--points-per-box", sp.points_per_box)->each([&](const std::string&) { have_sp = true; });
    gen->add_option("--background", sp.background_points)->each([&](const std::string&) { have_sp = true; });
    gen->add_option("--sweeps", sp.sweeps)->each([&](const std::string&) { have_sp = true; });

    auto* enc = app.add_subcommand("encode", "encode a scene into a BEV dump");
    add_common(enc);
    std::string sparse_path, labels_path;
    enc->add_option("--scene", common.scene, "point file (bin5 or csv)");
    enc->add_option("--params", common.params, "checkpoint; seeded init when absent");
    enc->add_option("--sparse", sparse_path, "also write the sparse pillar features");
    enc->add_option("--labels", labels_path, "also write objectness labels");

    auto* bench = app.add_subcommand("bench", "time each encoding stage");
    add_common(bench);
    std::size_t repeats = 5, n_points = 300000;
    bench->add_option("--scene", common.scene, "point file; synthetic when absent");
    bench->add_option("--params", common.params, "checkpoint");
    bench->add_option("--repeats", repeats, "timed runs after one warm-up")->check(CLI::PositiveNumber);
    bench->add_option("--points", n_points, "synthetic scene size");

    auto* grad = app.add_subcommand("check-grad", "finite-difference check of every layer and encoder graph");
    add_common(grad);

    auto* train = app.add_subcommand("train-toy", "overfit the objectness loss on one scene");
    add_common(train);
    std::string curve_path;
    std::optional<std::size_t> steps;
    std::optional<double> lr;
    bool check = false;
    train->add_option("--scene", common.scene, "point file; synthetic from the config when absent");
    train->add_option("--params", common.params, "initial checkpoint");
    train->add_option("--curve", curve_path, "loss curve CSV (default <out>.loss.csv)");
    train->add_option("--steps", steps);
    train->add_option("--lr", lr);
    train->add_flag("--check", check, "exit 4 unless loss < 10% of initial and ROC-AUC > 0.9");

    auto* print = app.add_subcommand("print-config", "print the effective configuration");
    add_common(print);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (*gen) return cmd_gen_scene(common, sp, have_sp);
        if (*enc) return cmd_encode(common, sparse_path, labels_path);
        if (*bench) return cmd_bench(common, repeats, n_points);
        if (*grad) return cmd_check_grad(common);
        if (*train) return cmd_train_toy(common, curve_path, steps, lr, check);
        std::cout << to_text(resolve(common));
        return kOk;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
}
