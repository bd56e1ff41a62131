#pragma once

#include "semd/camera.hpp"
#include "semd/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace semd {

struct MetricReport {
    double euclid_pred_to_gt = 0.0;
    double euclid_gt_to_pred = 0.0;
    double chamfer = 0.0;
    double emd = 0.0;
    std::int64_t pred_points = 0;
    std::int64_t gt_points = 0;
};

inline constexpr double kDefaultMaskThreshold = 0.5;

// Union of backproject() over the 8 views, keeping pixels with mask >=
// threshold, in view-major row-major order. `all_empty` reports the
// nothing-selected case (the cloud is then empty, not an error).
PointCloud fuse_viewpoints(const std::vector<CoordImage>& views,
                           const std::vector<Viewpoint>& viewpoints, const Intrinsics& intr,
                           double mask_threshold = kDefaultMaskThreshold,
                           bool* all_empty = nullptr);

// Differentiable fusion over raw decoder grids ([4,H,W] per view, channels
// u,v,depth,mask). Emits [P,4] rows (x,y,z,weight); pixel selection by
// threshold is constant during backward, while coordinates stay
// differentiable through the back-projection and the weight column carries
// the mask gradient. Returns nullopt when no pixel passes the threshold.
std::optional<Tensor> fuse_viewpoints_diff(const std::vector<Tensor>& grids,
                                           const std::vector<Viewpoint>& viewpoints,
                                           const Intrinsics& intr,
                                           double mask_threshold = kDefaultMaskThreshold);

// Mean over `source` of the Euclidean distance to its nearest neighbor in
// `target`; directional.
double euclid_distance(const PointCloud& source, const PointCloud& target);

// Symmetric sum of squared nearest-neighbor distances.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

// O(n^2) reference scans used to cross-check the tree-accelerated paths.
double euclid_distance_bruteforce(const PointCloud& source, const PointCloud& target);
double chamfer_distance_bruteforce(const PointCloud& a, const PointCloud& b);

// Minimum over bijections of the summed Euclidean (non-squared) distances;
// optimal assignment, |a| == |b| <= 512.
double emd_exact(const PointCloud& a, const PointCloud& b);

// Auction-based upper bound on emd_exact; `iterations` counts
// epsilon-scaling phases and more phases never increase the result.
double emd_approx(const PointCloud& a, const PointCloud& b, int iterations = 6);

// Uniform-with-replacement resampling to exactly n points.
PointCloud resample(const PointCloud& cloud, std::int64_t n, std::uint64_t seed);

// Full report: directional Euclidean on the complete clouds, Chamfer and
// EMD on `n_points` resamples.
MetricReport compute_metrics(const PointCloud& pred, const PointCloud& gt, std::int64_t n_points,
                             std::uint64_t seed);

void write_ply(const std::string& path, const PointCloud& cloud);
PointCloud read_ply(const std::string& path);

void write_metric_csv(const std::string& path,
                      const std::vector<std::pair<std::string, MetricReport>>& rows);

} // namespace semd
