#pragma once

#include "semd/fusion_metrics.hpp"
#include "semd/generator.hpp"
#include "semd/loss.hpp"
#include "semd/synthdata.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace semd {

struct TrainConfig {
    int n_decoders = 8;
    double pretrain_lr = 5e-3;
    double finetune_lr = 5e-6;
    double lambda = 1.0;
    int supervision_view_count = 5; // K views drawn per item per iteration
    std::int64_t pretrain_iters = 2000;
    std::int64_t finetune_iters = 1000;
    std::int64_t batch_size = 4;
    std::uint64_t seed = 0;
    double mask_threshold = kDefaultMaskThreshold;
    double grad_clip_norm = 10.0;
    int render_upsample = kDefaultUpsample;
    // When nonempty, a diagnostic checkpoint lands here if training hits a
    // non-finite loss.
    std::string diagnostics_path;

    void validate() const;
};

// Stage 1: direct regression of the 8 fixed cube-corner coordinate images
// (u/v pixel ramps, GT depth, GT mask). Appends one record per iteration to
// the returned log. Throws TrainingError on non-finite loss.
std::vector<LossRecord> pretrain(SEMDNetwork& net, const std::vector<DatasetEntry>& dataset,
                                 const TrainConfig& cfg);

// Stage 2: end-to-end joint 2D-projection optimization — forward, fuse,
// pseudo-render into K random supervision views, Eq. 4 loss, backprop
// through rendering and fusion. Iterations whose every batch item fuses to
// an empty cloud are skipped; 100 consecutive skips abort.
std::vector<LossRecord> finetune(SEMDNetwork& net, const std::vector<DatasetEntry>& dataset,
                                 const TrainConfig& cfg);

// Forward plus fusion under the default camera rig (cube corners at the
// default radius, default intrinsics at the configured output size).
PointCloud infer(SEMDNetwork& net, const Tensor& image,
                 double mask_threshold = kDefaultMaskThreshold, bool* empty_flag = nullptr);

struct EvalResult {
    std::vector<std::pair<std::string, MetricReport>> rows; // per evaluated entry
    MetricReport mean;                                      // over successful rows
    int failures = 0;                                       // entries with undefined metrics
};

// Infers from each entry's azimuth-0 render and scores against the entry's
// GT surface samples (full clouds for the directional Euclidean metric,
// n_points resamples for Chamfer/EMD).
EvalResult evaluate(SEMDNetwork& net, const std::vector<DatasetEntry>& dataset,
                    std::int64_t n_points, std::uint64_t seed);

// [3,S,S] CHW buffer -> [1,3,S,S] tensor.
Tensor make_image_tensor(const std::vector<double>& chw, std::int64_t size);

int cli(int argc, char** argv);

} // namespace semd
