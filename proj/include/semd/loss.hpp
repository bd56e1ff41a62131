#pragma once

#include "semd/pseudorender.hpp"
#include "semd/tensor.hpp"

#include <string>
#include <vector>

namespace semd {

struct LossBreakdown {
    double mask_loss = 0.0;
    double depth_loss = 0.0;
    double total = 0.0;
    std::vector<std::pair<double, double>> per_view; // (mask, depth) per supervision view
    int empty_foreground_views = 0; // views whose GT mask was all zero
};

inline constexpr double kProbClamp = 1e-7;

// Per-view pixel-mean binary cross-entropy against binary targets, summed
// over views. Predictions are clamped to [1e-7, 1-1e-7].
Tensor mask_loss(const std::vector<Tensor>& pred_masks, const std::vector<RenderPair>& gt);

// Per-view mean L1 depth error over GT-foreground pixels, summed over views.
// A view with no foreground contributes 0 (tallied by joint_loss).
Tensor depth_loss(const std::vector<Tensor>& pred_depths, const std::vector<RenderPair>& gt);

// total = mask + lambda * depth over K supervision views. Each prediction is
// a [2,S,S] tensor (depth plane, mask plane) as produced by
// pseudo_render_diff. Returns the differentiable total; the breakdown holds
// the detached per-view values.
Tensor joint_loss(const std::vector<Tensor>& pred_views, const std::vector<RenderPair>& gt_views,
                  double lambda, LossBreakdown* breakdown = nullptr);

// Training-log lines: "iter,total,mask,depth".
struct LossRecord {
    std::int64_t iter = 0;
    double total = 0.0;
    double mask = 0.0;
    double depth = 0.0;
};

void append_loss_log(const std::string& path, const std::vector<LossRecord>& records);
std::vector<LossRecord> read_loss_log(const std::string& path);

} // namespace semd
