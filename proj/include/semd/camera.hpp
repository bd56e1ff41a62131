#pragma once

#include "semd/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace semd {

// Pinhole intrinsics. Pixel coordinates are continuous with the principal
// point at (cx, cy); pixel (r, c) covers [c, c+1) x [r, r+1).
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    Eigen::Matrix3d K() const;

    // Default calibration for a square image: fx = fy = 1.875 * width,
    // principal point at the image center. A unit-radius object at camera
    // radius 2.5 then fills roughly 75% of the frame.
    static Intrinsics for_image(std::int64_t width);

    // Intrinsics for the same field of view at `factor`-times resolution.
    Intrinsics scaled(int factor) const;

    // Same field of view at an arbitrarily rescaled image size.
    Intrinsics resized(double factor) const;
};

// World-to-camera rigid transform q = R*p + t. Camera frame: x right,
// y down, z forward (optical axis).
struct Viewpoint {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    std::string label;

    Eigen::Vector3d center() const { return -R.transpose() * t; }
    bool is_rotation(double tol = 1e-9) const;
};

struct PointCloud {
    std::vector<Eigen::Vector3d> points;
    std::vector<double> confidence; // empty, or one value in [0,1] per point

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// Per-pixel (u, v, depth, mask) image predicted for one of the 8 fixed
// viewpoints. grid has shape [4, H, W] with channels in that order; u and v
// are continuous pixel coordinates in the output image, depth is
// camera-frame z.
struct CoordImage {
    Tensor grid;
    int view_index = 0;

    std::int64_t size() const { return grid.dim(1); }
};

struct ProjectedPoint {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    std::size_t index = 0; // position in the source cloud
};

// Camera-frame projection of every point with positive depth; points at or
// behind the camera plane are excluded.
std::vector<ProjectedPoint> project_forward(const PointCloud& cloud, const Viewpoint& vp,
                                            const Intrinsics& intr);

struct BackprojectStats {
    std::int64_t skipped_nonfinite = 0;
};

// Lifts masked pixels to world points: p = R^T (K^{-1} x_hat - t) with
// x_hat = (u*z, v*z, z). Confidence carries the mask value. Pixels with
// non-finite depth are skipped and tallied.
PointCloud backproject(const CoordImage& ci, const Viewpoint& vp, const Intrinsics& intr,
                       double mask_threshold = 0.5, BackprojectStats* stats = nullptr);

// Look-at pose with the optical axis through `target`; world up is +y,
// falling back to +z when the view direction is collinear with it.
Viewpoint look_at(const Eigen::Vector3d& camera_center,
                  const Eigen::Vector3d& target = Eigen::Vector3d::Zero(),
                  std::string label = {});

// The 8 fixed poses at the corners of a centered cube, camera centers at
// distance `radius` from the origin, ordered sign-lexicographically over
// (sx, sy, sz) with -1 before +1.
std::vector<Viewpoint> cube_corner_viewpoints(double radius);

// `count` poses equally spaced in azimuth at a fixed elevation (degrees
// above the x-z equator), all looking at the origin from distance `radius`.
std::vector<Viewpoint> azimuth_ring_viewpoints(int count, double elevation_deg, double radius);

// Plain-text pose set: one line of 12 reals per view (row-major R, then t);
// '#' starts a comment.
void write_viewpoints(const std::string& path, const std::vector<Viewpoint>& views);
std::vector<Viewpoint> read_viewpoints(const std::string& path);

inline constexpr double kDefaultCameraRadius = 2.5;

} // namespace semd
