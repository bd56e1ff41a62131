#pragma once

#include "semd/camera.hpp"
#include "semd/tensor.hpp"

#include <cstdint>
#include <vector>

namespace semd {

struct GroundTruthShape;

// Depth values are camera-frame z in world units; background pixels hold
// `far_value` and mask 0.
struct RenderPair {
    std::int64_t size = 0; // square image, row-major
    std::vector<double> depth;
    std::vector<double> mask;
    double far_value = 25.0;

    static RenderPair background(std::int64_t size, double far_value);
};

inline constexpr double kFarDepth = 10.0 * kDefaultCameraRadius;
inline constexpr int kDefaultUpsample = 5;
inline constexpr int kGroundTruthUpsample = 4;

// Dense z-buffer rasterization at out_size*upsample, then pooling back to
// out_size: depth averages the occupied high-res bins of each output pixel,
// mask takes the maximum contributing point weight (cloud.confidence, or 1
// when absent). Empty clouds yield an all-background image.
RenderPair pseudo_render(const PointCloud& cloud, const Viewpoint& vp, const Intrinsics& intr,
                         int out_size, int upsample = kDefaultUpsample);

// Differentiable variant. cloud is [P,4] rows (x, y, z, weight); the result
// is [2,S,S] with channel 0 depth and channel 1 mask. Pixel assignments and
// pooling selections are treated as constants during backward: each occupied
// output pixel routes its depth gradient to the winning points (scaled by
// 1/occupied-bin-count) and its mask gradient to the max-weight winner.
Tensor pseudo_render_diff(const Tensor& cloud, const Viewpoint& vp, const Intrinsics& intr,
                          int out_size, int upsample = kDefaultUpsample);

// Ground-truth render from a shape's dense surface sampling; min-pooled
// depth (nearest surface in each output pixel) and binary mask.
RenderPair render_ground_truth(const GroundTruthShape& shape, const Viewpoint& vp,
                               const Intrinsics& intr, int out_size);

// min-pool core used by render_ground_truth, exposed for direct use on a
// prepared dense cloud.
RenderPair render_dense_cloud(const PointCloud& dense, const Viewpoint& vp,
                              const Intrinsics& intr, int out_size,
                              int upsample = kGroundTruthUpsample);

// Same render, also reporting which source point supplied each pixel's
// depth (-1 on background) — the hook for shading by source attributes.
struct DenseRender {
    RenderPair pair;
    std::vector<std::int64_t> winners;
};

DenseRender render_dense_cloud_winners(const PointCloud& dense, const Viewpoint& vp,
                                       const Intrinsics& intr, int out_size,
                                       int upsample = kGroundTruthUpsample);

} // namespace semd
