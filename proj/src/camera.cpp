#include "semd/camera.hpp"

#include "semd/errors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace semd {

Eigen::Matrix3d Intrinsics::K() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
}

Intrinsics Intrinsics::for_image(std::int64_t width) {
    if (width < 1) throw ConfigError("intrinsics: image width must be positive");
    const double w = static_cast<double>(width);
    return Intrinsics{1.875 * w, 1.875 * w, 0.5 * w, 0.5 * w};
}

Intrinsics Intrinsics::scaled(int factor) const {
    if (factor < 1) throw ConfigError("intrinsics: scale factor must be >= 1");
    const double f = static_cast<double>(factor);
    return Intrinsics{fx * f, fy * f, cx * f, cy * f};
}

Intrinsics Intrinsics::resized(double factor) const {
    if (!(factor > 0.0)) throw ConfigError("intrinsics: resize factor must be positive");
    return Intrinsics{fx * factor, fy * factor, cx * factor, cy * factor};
}

bool Viewpoint::is_rotation(double tol) const {
    const Eigen::Matrix3d gram = R.transpose() * R;
    return (gram - Eigen::Matrix3d::Identity()).norm() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol;
}

std::vector<ProjectedPoint> project_forward(const PointCloud& cloud, const Viewpoint& vp,
                                            const Intrinsics& intr) {
    std::vector<ProjectedPoint> out;
    out.reserve(cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Eigen::Vector3d q = vp.R * cloud.points[i] + vp.t;
        if (!(q.z() > 0.0)) continue; // behind the camera plane (or non-finite)
        ProjectedPoint p;
        p.u = intr.fx * q.x() / q.z() + intr.cx;
        p.v = intr.fy * q.y() / q.z() + intr.cy;
        p.depth = q.z();
        p.index = i;
        out.push_back(p);
    }
    return out;
}

PointCloud backproject(const CoordImage& ci, const Viewpoint& vp, const Intrinsics& intr,
                       double mask_threshold, BackprojectStats* stats) {
    if (ci.grid.rank() != 3 || ci.grid.dim(0) != 4)
        throw DimensionError("backproject: coordinate image must be [4,H,W]");
    const std::int64_t H = ci.grid.dim(1), W = ci.grid.dim(2);
    const std::int64_t plane = H * W;
    const double* g = ci.grid.data().data();
    const double* u_ch = g;
    const double* v_ch = g + plane;
    const double* z_ch = g + 2 * plane;
    const double* m_ch = g + 3 * plane;

    const Eigen::Matrix3d Rt = vp.R.transpose();
    PointCloud cloud;
    for (std::int64_t i = 0; i < plane; ++i) {
        if (m_ch[i] < mask_threshold) continue;
        const double z = z_ch[i];
        if (!std::isfinite(z) || !std::isfinite(u_ch[i]) || !std::isfinite(v_ch[i])) {
            if (stats) stats->skipped_nonfinite += 1;
            continue;
        }
        // K^{-1} * (u*z, v*z, z)
        const Eigen::Vector3d cam((u_ch[i] - intr.cx) / intr.fx * z,
                                  (v_ch[i] - intr.cy) / intr.fy * z, z);
        cloud.points.emplace_back(Rt * (cam - vp.t));
        cloud.confidence.push_back(m_ch[i]);
    }
    return cloud;
}

Viewpoint look_at(const Eigen::Vector3d& camera_center, const Eigen::Vector3d& target,
                  std::string label) {
    const Eigen::Vector3d forward = target - camera_center;
    const double dist = forward.norm();
    if (dist < 1e-12) throw ConfigError("look_at: camera center coincides with target");
    const Eigen::Vector3d z = forward / dist;

    Eigen::Vector3d up(0.0, 1.0, 0.0);
    if (z.cross(up).norm() < 1e-8) up = Eigen::Vector3d(0.0, 0.0, 1.0);
    const Eigen::Vector3d x = z.cross(up).normalized(); // right = forward x up
    const Eigen::Vector3d y = z.cross(x);               // down completes the triad

    Viewpoint vp;
    vp.R.row(0) = x;
    vp.R.row(1) = y;
    vp.R.row(2) = z;
    vp.t = -vp.R * camera_center;
    vp.label = std::move(label);
    return vp;
}

std::vector<Viewpoint> cube_corner_viewpoints(double radius) {
    if (!(radius > 0.0)) throw ConfigError("cube_corner_viewpoints: radius must be positive");
    const double c = radius / std::sqrt(3.0);
    std::vector<Viewpoint> views;
    views.reserve(8);
    int idx = 0;
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0})
            for (double sz : {-1.0, 1.0}) {
                views.push_back(look_at(Eigen::Vector3d(sx * c, sy * c, sz * c),
                                        Eigen::Vector3d::Zero(), "corner" + std::to_string(idx)));
                ++idx;
            }
    return views;
}

std::vector<Viewpoint> azimuth_ring_viewpoints(int count, double elevation_deg, double radius) {
    if (count < 1) throw ConfigError("azimuth_ring_viewpoints: count must be >= 1");
    if (!(radius > 0.0)) throw ConfigError("azimuth_ring_viewpoints: radius must be positive");
    const double elev = elevation_deg * std::numbers::pi / 180.0;
    std::vector<Viewpoint> views;
    views.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double az = 2.0 * std::numbers::pi * static_cast<double>(i) / count;
        const Eigen::Vector3d center(radius * std::cos(elev) * std::cos(az),
                                     radius * std::sin(elev),
                                     radius * std::cos(elev) * std::sin(az));
        views.push_back(look_at(center, Eigen::Vector3d::Zero(), "ring" + std::to_string(i)));
    }
    return views;
}

void write_viewpoints(const std::string& path, const std::vector<Viewpoint>& views) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "# one view per line: r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n";
    os << std::setprecision(17);
    for (const Viewpoint& vp : views) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) os << vp.R(r, c) << ' ';
        os << vp.t.x() << ' ' << vp.t.y() << ' ' << vp.t.z() << '\n';
    }
    if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<Viewpoint> read_viewpoints(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    std::vector<Viewpoint> views;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        double vals[12];
        if (!(ls >> vals[0])) continue; // blank or comment-only line
        for (int i = 1; i < 12; ++i)
            if (!(ls >> vals[i]))
                throw CorruptContainerError("'" + path + "': viewpoint line " +
                                            std::to_string(views.size()) + " has fewer than 12 values");
        Viewpoint vp;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) vp.R(r, c) = vals[3 * r + c];
        vp.t = Eigen::Vector3d(vals[9], vals[10], vals[11]);
        vp.label = "view" + std::to_string(views.size());
        views.push_back(vp);
    }
    return views;
}

} // namespace semd
