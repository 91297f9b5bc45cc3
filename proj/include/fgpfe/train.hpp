#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fgpfe/pipeline.hpp"
#include "fgpfe/runconfig.hpp"

namespace fgpfe {

struct TrainResult {
    std::vector<double> loss_curve;  // loss before each step
    double initial_loss = 0.0;
    double final_loss = 0.0;         // after the last step
    double auc = 0.0;                // mean of the three head probabilities vs labels
    std::size_t n_pillars = 0;
    std::size_t n_positive = 0;
    double seconds = 0.0;
};

// Area under the ROC curve via the rank-sum statistic, ties counted half.
// NaN when either class is empty.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Per-pillar foreground scores: the mean of the three branch heads.
std::vector<double> pillar_scores(const AlignedBranches& branches, const ObjectnessHeads& heads);

// Plain SGD on the objectness loss over a single scene. The model is updated in place.
TrainResult train_toy(const Scene& scene, const RunConfig& cfg, FgPfeModel& model);

void save_loss_curve(const TrainResult& result, const std::string& path);

}  // namespace fgpfe
