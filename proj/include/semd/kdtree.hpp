#pragma once

#include "semd/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace semd {

// Exact nearest-neighbor search over a fixed 3D point set. Ties in distance
// resolve to the lowest point index, matching a first-wins linear scan.
class KdTree {
public:
    explicit KdTree(const std::vector<Eigen::Vector3d>& points) : pts_(points) {
        if (pts_.empty()) throw UndefinedMetricError("kd-tree over an empty point set");
        order_.resize(pts_.size());
        for (std::size_t i = 0; i < pts_.size(); ++i) order_[i] = i;
        nodes_.reserve(2 * pts_.size());
        root_ = build(0, pts_.size());
    }

    // Returns (index, squared distance).
    std::pair<std::size_t, double> nearest(const Eigen::Vector3d& q) const {
        std::size_t best_idx = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        search(root_, q, best_idx, best_d2);
        return {best_idx, best_d2};
    }

private:
    struct Node {
        int axis = -1;          // -1 marks a leaf
        double split = 0.0;
        std::int64_t left = -1, right = -1;
        std::size_t begin = 0, end = 0; // leaf range in order_
    };

    static constexpr std::size_t kLeafSize = 16;

    std::int64_t build(std::size_t begin, std::size_t end) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.begin = begin;
            node.end = end;
            // Keep leaves index-sorted so equal distances hit lower indices first.
            std::sort(order_.begin() + begin, order_.begin() + end);
            nodes_.push_back(node);
            return static_cast<std::int64_t>(nodes_.size() - 1);
        }
        Eigen::Vector3d lo = pts_[order_[begin]], hi = lo;
        for (std::size_t i = begin + 1; i < end; ++i) {
            lo = lo.cwiseMin(pts_[order_[i]]);
            hi = hi.cwiseMax(pts_[order_[i]]);
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::size_t a, std::size_t b) {
                             const double ca = pts_[a][axis], cb = pts_[b][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        node.axis = axis;
        node.split = pts_[order_[mid]][axis];
        nodes_.push_back(node);
        const std::int64_t self = static_cast<std::int64_t>(nodes_.size() - 1);
        const std::int64_t left = build(begin, mid);
        const std::int64_t right = build(mid, end);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    void search(std::int64_t ni, const Eigen::Vector3d& q, std::size_t& best_idx,
                double& best_d2) const {
        const Node& node = nodes_[static_cast<std::size_t>(ni)];
        if (node.axis < 0) {
            for (std::size_t i = node.begin; i < node.end; ++i) {
                const std::size_t idx = order_[i];
                const double d2 = (pts_[idx] - q).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
                    best_d2 = d2;
                    best_idx = idx;
                }
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const std::int64_t near = delta < 0.0 ? node.left : node.right;
        const std::int64_t far = delta < 0.0 ? node.right : node.left;
        search(near, q, best_idx, best_d2);
        if (delta * delta <= best_d2) search(far, q, best_idx, best_d2);
    }

    std::vector<Eigen::Vector3d> pts_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::int64_t root_ = -1;
};

// Reference linear scan with the same tie rule; the oracle the tree is
// checked against.
inline std::pair<std::size_t, double> nearest_linear(const std::vector<Eigen::Vector3d>& pts,
                                                     const Eigen::Vector3d& q) {
    if (pts.empty()) throw UndefinedMetricError("nearest neighbor of an empty point set");
    std::size_t best = 0;
    double best_d2 = (pts[0] - q).squaredNorm();
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const double d2 = (pts[i] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return {best, best_d2};
}

} // namespace semd
