#include "fgpfe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "fgpfe/error.hpp"
#include "fgpfe/optim.hpp"

namespace fgpfe {

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: score and label counts differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<double> pillar_scores(const AlignedBranches& branches, const ObjectnessHeads& heads) {
    nd::NoGradGuard g;
    const auto sv = objectness_scores(branches.v, heads.v).value();
    const auto st = objectness_scores(branches.t, heads.t).value();
    const auto sh = objectness_scores(branches.h, heads.h).value();
    std::vector<double> out(sv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (sv[i] + st[i] + sh[i]) / 3.0;
    return out;
}

TrainResult train_toy(const Scene& scene, const RunConfig& cfg, FgPfeModel& model) {
    const auto start = std::chrono::steady_clock::now();
    const PreparedScene prepared = prepare_scene(scene.points, cfg.grid, model.stv);
    auto params = model.parameters();

    std::vector<std::uint8_t> labels;
    {
        nd::NoGradGuard g;
        labels = make_labels(encode_branches(prepared, model).cells, cfg.grid, scene.boxes);
    }

    TrainResult r;
    r.n_pillars = labels.size();
    r.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
    r.loss_curve.reserve(cfg.training.steps);
    for (std::size_t step = 0; step < cfg.training.steps; ++step) {
        const auto b = encode_branches(prepared, model);
        const nd::Var loss = objectness_loss(b.v, b.t, b.h, labels, model.heads, cfg.lambda_gl, cfg.focal);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("train_toy: loss diverged at step " + std::to_string(step));
        r.loss_curve.push_back(value);
        nd::backward(loss);
        nd::sgd_step(params, cfg.training.lr);
    }

    nd::NoGradGuard g;
    const auto b = encode_branches(prepared, model);
    r.final_loss = objectness_loss(b.v, b.t, b.h, labels, model.heads, cfg.lambda_gl, cfg.focal).value().item();
    r.initial_loss = r.loss_curve.empty() ? r.final_loss : r.loss_curve.front();
    const auto scores = pillar_scores(b, model.heads);
    r.auc = roc_auc(scores, labels);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

void save_loss_curve(const TrainResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, result.loss_curve[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", result.loss_curve.size(), result.final_loss);
    out << buf;
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace fgpfe
