#include "semd/fusion_metrics.hpp"

#include "semd/errors.hpp"
#include "semd/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace semd {

namespace {

constexpr std::int64_t kEmdExactLimit = 512;
constexpr std::size_t kBruteForceCutover = 32; // below this a scan beats the tree

void check_nonempty(const PointCloud& c, const char* what) {
    if (c.empty()) throw UndefinedMetricError(std::string(what) + ": empty point cloud");
}

// Hungarian algorithm with potentials (shortest augmenting paths), O(n^3).
double min_cost_assignment(const std::vector<double>& cost, std::int64_t n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::int64_t> p(n + 1, 0), way(n + 1, 0);
    for (std::int64_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::int64_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::int64_t i0 = p[j0];
            std::int64_t j1 = -1;
            double delta = inf;
            for (std::int64_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::int64_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::int64_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    for (std::int64_t j = 1; j <= n; ++j) total += cost[(p[j] - 1) * n + (j - 1)];
    return total;
}

std::vector<double> pairwise_distances(const PointCloud& a, const PointCloud& b) {
    const std::int64_t n = static_cast<std::int64_t>(a.size());
    std::vector<double> cost(static_cast<std::size_t>(n * n));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            cost[static_cast<std::size_t>(i * n + j)] = (a.points[i] - b.points[j]).norm();
    return cost;
}

void check_emd_inputs(const PointCloud& a, const PointCloud& b) {
    check_nonempty(a, "emd");
    check_nonempty(b, "emd");
    if (a.size() != b.size())
        throw CardinalityError("emd: point counts differ (" + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()) + "); resample first");
}

// One complete forward-auction pass at a fixed epsilon over the benefit
// matrix (maximization); returns the assignment in person->object form.
void auction_pass(const std::vector<double>& benefit, std::int64_t n, double eps,
                  std::vector<std::int64_t>& owner_of, std::vector<std::int64_t>& object_of,
                  std::vector<double>& price) {
    std::fill(owner_of.begin(), owner_of.end(), -1);
    std::fill(object_of.begin(), object_of.end(), -1);
    std::vector<std::int64_t> queue;
    queue.reserve(n);
    for (std::int64_t i = 0; i < n; ++i) queue.push_back(i);
    while (!queue.empty()) {
        const std::int64_t person = queue.back();
        queue.pop_back();
        const double* row = benefit.data() + person * n;
        std::int64_t best_j = 0;
        double best = -std::numeric_limits<double>::infinity();
        double second = best;
        for (std::int64_t j = 0; j < n; ++j) {
            const double val = row[j] - price[static_cast<std::size_t>(j)];
            if (val > best) {
                second = best;
                best = val;
                best_j = j;
            } else if (val > second) {
                second = val;
            }
        }
        const double increment = (n == 1) ? eps : (best - second + eps);
        price[static_cast<std::size_t>(best_j)] += increment;
        const std::int64_t prev = owner_of[static_cast<std::size_t>(best_j)];
        if (prev >= 0) {
            object_of[static_cast<std::size_t>(prev)] = -1;
            queue.push_back(prev);
        }
        owner_of[static_cast<std::size_t>(best_j)] = person;
        object_of[static_cast<std::size_t>(person)] = best_j;
    }
}

} // namespace

PointCloud fuse_viewpoints(const std::vector<CoordImage>& views,
                           const std::vector<Viewpoint>& viewpoints, const Intrinsics& intr,
                           double mask_threshold, bool* all_empty) {
    if (views.size() != 8 || viewpoints.size() != 8)
        throw DimensionError("fuse_viewpoints: expected exactly 8 views with 8 viewpoints");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0))
        throw ConfigError("fuse_viewpoints: mask threshold must lie in (0,1)");
    PointCloud fused;
    for (std::size_t k = 0; k < views.size(); ++k) {
        PointCloud part = backproject(views[k], viewpoints[k], intr, mask_threshold);
        fused.points.insert(fused.points.end(), part.points.begin(), part.points.end());
        fused.confidence.insert(fused.confidence.end(), part.confidence.begin(),
                                part.confidence.end());
    }
    if (all_empty) *all_empty = fused.empty();
    return fused;
}

std::optional<Tensor> fuse_viewpoints_diff(const std::vector<Tensor>& grids,
                                           const std::vector<Viewpoint>& viewpoints,
                                           const Intrinsics& intr, double mask_threshold) {
    if (grids.size() != 8 || viewpoints.size() != 8)
        throw DimensionError("fuse_viewpoints_diff: expected exactly 8 views with 8 viewpoints");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0))
        throw ConfigError("fuse_viewpoints_diff: mask threshold must lie in (0,1)");

    struct Selected {
        std::size_t view;
        std::int64_t pixel;
    };
    std::vector<Selected> sel;
    for (std::size_t k = 0; k < grids.size(); ++k) {
        const Tensor& g = grids[k];
        if (g.rank() != 3 || g.dim(0) != 4)
            throw DimensionError("fuse_viewpoints_diff: each grid must be [4,H,W]");
        const std::int64_t plane = g.dim(1) * g.dim(2);
        const double* mask = g.data().data() + 3 * plane;
        for (std::int64_t i = 0; i < plane; ++i)
            if (mask[i] >= mask_threshold) sel.push_back({k, i});
    }
    if (sel.empty()) return std::nullopt;

    // Materialized transposes keep this path bit-identical to backproject().
    std::vector<Eigen::Matrix3d> Rt;
    Rt.reserve(viewpoints.size());
    for (const Viewpoint& vp : viewpoints) Rt.push_back(vp.R.transpose());

    const std::int64_t P = static_cast<std::int64_t>(sel.size());
    std::vector<double> out(static_cast<std::size_t>(P * 4));
    for (std::int64_t r = 0; r < P; ++r) {
        const Selected& s = sel[static_cast<std::size_t>(r)];
        const Tensor& g = grids[s.view];
        const std::int64_t plane = g.dim(1) * g.dim(2);
        const double* d = g.data().data();
        const double u = d[s.pixel];
        const double v = d[plane + s.pixel];
        const double z = d[2 * plane + s.pixel];
        const double w = d[3 * plane + s.pixel];
        const Viewpoint& vp = viewpoints[s.view];
        const Eigen::Vector3d cam((u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z);
        const Eigen::Vector3d world = Rt[s.view] * (cam - vp.t);
        out[r * 4 + 0] = world.x();
        out[r * 4 + 1] = world.y();
        out[r * 4 + 2] = world.z();
        out[r * 4 + 3] = w;
    }

    Tensor cloud = make_tensor({P, 4}, std::move(out));
    attach_node(
        cloud, grids,
        [grids, viewpoints, intr, sel = std::move(sel)](detail::TensorImpl& o) {
            const std::int64_t P = static_cast<std::int64_t>(sel.size());
            for (std::int64_t r = 0; r < P; ++r) {
                const Selected& s = sel[static_cast<std::size_t>(r)];
                const Tensor& g = grids[s.view];
                if (!g.requires_grad()) continue;
                const std::int64_t plane = g.dim(1) * g.dim(2);
                const double* d = g.impl()->data.data();
                const double u = d[s.pixel];
                const double v = d[plane + s.pixel];
                const double z = d[2 * plane + s.pixel];
                const Viewpoint& vp = viewpoints[s.view];

                const Eigen::Vector3d gp(o.grad[r * 4 + 0], o.grad[r * 4 + 1], o.grad[r * 4 + 2]);
                // world = R^T (cam - t)  =>  d(world) = R^T d(cam)
                const Eigen::Vector3d gc = vp.R * gp;
                double* gg = g.impl()->grad_data();
                gg[s.pixel] += gc.x() * z / intr.fx;
                gg[plane + s.pixel] += gc.y() * z / intr.fy;
                gg[2 * plane + s.pixel] += gc.x() * (u - intr.cx) / intr.fx +
                                           gc.y() * (v - intr.cy) / intr.fy + gc.z();
                gg[3 * plane + s.pixel] += o.grad[r * 4 + 3];
            }
        },
        "fuse_viewpoints");
    return cloud;
}

double euclid_distance(const PointCloud& source, const PointCloud& target) {
    check_nonempty(source, "euclid_distance");
    check_nonempty(target, "euclid_distance");
    double acc = 0.0;
    if (target.size() < kBruteForceCutover) {
        for (const Eigen::Vector3d& p : source.points)
            acc += std::sqrt(nearest_linear(target.points, p).second);
    } else {
        KdTree tree(target.points);
        for (const Eigen::Vector3d& p : source.points) acc += std::sqrt(tree.nearest(p).second);
    }
    return acc / static_cast<double>(source.size());
}

double euclid_distance_bruteforce(const PointCloud& source, const PointCloud& target) {
    check_nonempty(source, "euclid_distance");
    check_nonempty(target, "euclid_distance");
    double acc = 0.0;
    for (const Eigen::Vector3d& p : source.points)
        acc += std::sqrt(nearest_linear(target.points, p).second);
    return acc / static_cast<double>(source.size());
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
    check_nonempty(a, "chamfer_distance");
    check_nonempty(b, "chamfer_distance");
    double acc = 0.0;
    {
        KdTree tree(b.points);
        for (const Eigen::Vector3d& p : a.points) acc += tree.nearest(p).second;
    }
    {
        KdTree tree(a.points);
        for (const Eigen::Vector3d& p : b.points) acc += tree.nearest(p).second;
    }
    return acc;
}

double chamfer_distance_bruteforce(const PointCloud& a, const PointCloud& b) {
    check_nonempty(a, "chamfer_distance");
    check_nonempty(b, "chamfer_distance");
    double acc = 0.0;
    for (const Eigen::Vector3d& p : a.points) acc += nearest_linear(b.points, p).second;
    for (const Eigen::Vector3d& p : b.points) acc += nearest_linear(a.points, p).second;
    return acc;
}

double emd_exact(const PointCloud& a, const PointCloud& b) {
    check_emd_inputs(a, b);
    const std::int64_t n = static_cast<std::int64_t>(a.size());
    if (n > kEmdExactLimit)
        throw ConfigError("emd_exact: " + std::to_string(n) + " points exceeds the cubic-cost cap of " +
                          std::to_string(kEmdExactLimit));
    return min_cost_assignment(pairwise_distances(a, b), n);
}

double emd_approx(const PointCloud& a, const PointCloud& b, int iterations) {
    check_emd_inputs(a, b);
    if (iterations < 1) throw ConfigError("emd_approx: iterations must be >= 1");
    const std::int64_t n = static_cast<std::int64_t>(a.size());
    const std::vector<double> cost = pairwise_distances(a, b);

    double cmax = 0.0;
    for (double c : cost) cmax = std::max(cmax, c);
    if (cmax == 0.0) return 0.0;
    std::vector<double> benefit(cost.size());
    for (std::size_t i = 0; i < cost.size(); ++i) benefit[i] = cmax - cost[i];

    std::vector<double> price(static_cast<std::size_t>(n), 0.0);
    std::vector<std::int64_t> owner_of(static_cast<std::size_t>(n));
    std::vector<std::int64_t> object_of(static_cast<std::size_t>(n));
    double eps = cmax / 2.0;
    double best = std::numeric_limits<double>::infinity();
    for (int phase = 0; phase < iterations; ++phase) {
        auction_pass(benefit, n, eps, owner_of, object_of, price);
        double total = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            total += cost[static_cast<std::size_t>(i * n + object_of[static_cast<std::size_t>(i)])];
        best = std::min(best, total); // refinement never worsens the reported bound
        eps /= 5.0;
    }
    return best;
}

PointCloud resample(const PointCloud& cloud, std::int64_t n, std::uint64_t seed) {
    check_nonempty(cloud, "resample");
    if (n < 1) throw ConfigError("resample: target count must be >= 1");
    std::mt19937_64 rng(seed);
    PointCloud out;
    out.points.reserve(static_cast<std::size_t>(n));
    const bool has_conf = !cloud.confidence.empty();
    if (has_conf) out.confidence.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t idx = static_cast<std::size_t>(rng() % cloud.size());
        out.points.push_back(cloud.points[idx]);
        if (has_conf) out.confidence.push_back(cloud.confidence[idx]);
    }
    return out;
}

MetricReport compute_metrics(const PointCloud& pred, const PointCloud& gt, std::int64_t n_points,
                             std::uint64_t seed) {
    check_nonempty(pred, "compute_metrics");
    check_nonempty(gt, "compute_metrics");
    MetricReport r;
    r.pred_points = static_cast<std::int64_t>(pred.size());
    r.gt_points = static_cast<std::int64_t>(gt.size());
    r.euclid_pred_to_gt = euclid_distance(pred, gt);
    r.euclid_gt_to_pred = euclid_distance(gt, pred);
    const PointCloud ps = resample(pred, n_points, seed);
    const PointCloud gs = resample(gt, n_points, seed + 1);
    r.chamfer = chamfer_distance(ps, gs);
    r.emd = n_points <= kEmdExactLimit ? emd_exact(ps, gs) : emd_approx(ps, gs);
    return r;
}

void write_ply(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
       << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    char buf[128];
    for (const Eigen::Vector3d& p : cloud.points) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p.x())),
                      static_cast<double>(static_cast<float>(p.y())),
                      static_cast<double>(static_cast<float>(p.z())));
        os << buf;
    }
    if (!os) throw IoError("failed writing '" + path + "'");
}

PointCloud read_ply(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(is, line)) throw CorruptContainerError("'" + path + "': truncated PLY header");
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    };
    next_line();
    if (line != "ply") throw CorruptContainerError("'" + path + "': missing 'ply' magic");
    next_line();
    if (line != "format ascii 1.0")
        throw CorruptContainerError("'" + path + "': unsupported PLY format '" + line + "'");
    std::int64_t count = -1;
    std::vector<std::string> props;
    for (;;) {
        next_line();
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string kind;
            ls >> kind >> count;
            if (kind != "vertex")
                throw CorruptContainerError("'" + path + "': unsupported element '" + kind + "'");
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        } else {
            throw CorruptContainerError("'" + path + "': unexpected header line '" + line + "'");
        }
    }
    if (count < 0) throw CorruptContainerError("'" + path + "': no vertex element");
    if (props != std::vector<std::string>{"x", "y", "z"})
        throw CorruptContainerError("'" + path + "': expected exactly properties x, y, z");
    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        double x, y, z;
        if (!(is >> x >> y >> z))
            throw CorruptContainerError("'" + path + "': truncated vertex list at " +
                                        std::to_string(i) + " of " + std::to_string(count));
        cloud.points.emplace_back(x, y, z);
    }
    return cloud;
}

void write_metric_csv(const std::string& path,
                      const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "id,euclid_pred_to_gt,euclid_gt_to_pred,chamfer,emd,pred_points,gt_points\n";
    os.precision(12);
    for (const auto& [id, r] : rows)
        os << id << ',' << r.euclid_pred_to_gt << ',' << r.euclid_gt_to_pred << ',' << r.chamfer
           << ',' << r.emd << ',' << r.pred_points << ',' << r.gt_points << '\n';
    if (!os) throw IoError("failed writing '" + path + "'");
}

} // namespace semd
