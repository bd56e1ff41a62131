#include "semd/pseudorender.hpp"

#include "semd/errors.hpp"
#include "semd/synthdata.hpp"

#include <cmath>
#include <limits>

namespace semd {

namespace {

enum class DepthPool { average, minimum };

struct RasterOutput {
    RenderPair pair;
    // Backward bookkeeping (filled when requested): per output pixel, the
    // indices of points winning its occupied high-res bins, plus the single
    // winner carrying the mask gradient.
    std::vector<std::int64_t> winner_offsets; // S*S+1 prefix sums into depth_winners
    std::vector<std::int64_t> depth_winners;
    std::vector<std::int64_t> mask_argmax; // S*S, -1 where unoccupied
    std::vector<std::int64_t> depth_pick;  // min-pool only: winner of the min bin
};

// xyz: P points with `stride` doubles per row (first three are x,y,z);
// weights == nullptr means weight 1 everywhere.
RasterOutput rasterize(const double* xyz, std::int64_t stride, const double* weights,
                       std::int64_t P, const Viewpoint& vp, const Intrinsics& intr,
                       int out_size, int upsample, DepthPool pool, bool bookkeeping) {
    if (out_size < 8) throw ConfigError("rasterize: out_size must be >= 8");
    if (upsample < 1) throw ConfigError("rasterize: upsample must be >= 1");
    const std::int64_t S = out_size;
    const std::int64_t Shi = S * static_cast<std::int64_t>(upsample);
    const Intrinsics hi = intr.scaled(upsample);

    // High-res z-buffer; ties keep the earlier point.
    std::vector<double> zbuf(static_cast<std::size_t>(Shi * Shi),
                             std::numeric_limits<double>::infinity());
    std::vector<std::int64_t> win(static_cast<std::size_t>(Shi * Shi), -1);

    for (std::int64_t i = 0; i < P; ++i) {
        const double* p = xyz + i * stride;
        const Eigen::Vector3d q = vp.R * Eigen::Vector3d(p[0], p[1], p[2]) + vp.t;
        if (!(q.z() > 0.0)) continue;
        const double u = hi.fx * q.x() / q.z() + hi.cx;
        const double v = hi.fy * q.y() / q.z() + hi.cy;
        if (!(u >= 0.0) || !(v >= 0.0) || u >= static_cast<double>(Shi) ||
            v >= static_cast<double>(Shi))
            continue;
        const std::int64_t bx = static_cast<std::int64_t>(u);
        const std::int64_t by = static_cast<std::int64_t>(v);
        const std::size_t bin = static_cast<std::size_t>(by * Shi + bx);
        if (q.z() < zbuf[bin]) {
            zbuf[bin] = q.z();
            win[bin] = i;
        }
    }
    RasterOutput out;
    out.pair = RenderPair::background(S, kFarDepth);
    if (bookkeeping) {
        out.winner_offsets.assign(static_cast<std::size_t>(S * S + 1), 0);
        out.mask_argmax.assign(static_cast<std::size_t>(S * S), -1);
        out.depth_pick.assign(static_cast<std::size_t>(S * S), -1);
    }

    for (std::int64_t oy = 0; oy < S; ++oy) {
        for (std::int64_t ox = 0; ox < S; ++ox) {
            const std::size_t opix = static_cast<std::size_t>(oy * S + ox);
            double depth_acc = (pool == DepthPool::minimum)
                                   ? std::numeric_limits<double>::infinity()
                                   : 0.0;
            std::int64_t occupied = 0;
            double best_w = -1.0;
            std::int64_t best_i = -1;
            std::int64_t min_i = -1;
            for (int dy = 0; dy < upsample; ++dy) {
                const std::int64_t hy = oy * upsample + dy;
                for (int dx = 0; dx < upsample; ++dx) {
                    const std::size_t bin = static_cast<std::size_t>(hy * Shi + ox * upsample + dx);
                    const std::int64_t w = win[bin];
                    if (w < 0) continue;
                    occupied += 1;
                    if (pool == DepthPool::minimum) {
                        if (zbuf[bin] < depth_acc) {
                            depth_acc = zbuf[bin];
                            min_i = w;
                        }
                    } else {
                        depth_acc += zbuf[bin];
                    }
                    const double wt = weights ? weights[w] : 1.0;
                    if (wt > best_w) {
                        best_w = wt;
                        best_i = w;
                    }
                    if (bookkeeping) out.depth_winners.push_back(w);
                }
            }
            if (bookkeeping) out.winner_offsets[opix + 1] = static_cast<std::int64_t>(out.depth_winners.size());
            if (occupied == 0) continue;
            out.pair.depth[opix] = (pool == DepthPool::minimum)
                                       ? depth_acc
                                       : depth_acc / static_cast<double>(occupied);
            out.pair.mask[opix] = best_w;
            if (bookkeeping) {
                out.mask_argmax[opix] = best_i;
                out.depth_pick[opix] = (pool == DepthPool::minimum) ? min_i : best_i;
            }
        }
    }
    return out;
}

} // namespace

RenderPair RenderPair::background(std::int64_t size, double far_value) {
    RenderPair rp;
    rp.size = size;
    rp.far_value = far_value;
    rp.depth.assign(static_cast<std::size_t>(size * size), far_value);
    rp.mask.assign(static_cast<std::size_t>(size * size), 0.0);
    return rp;
}

RenderPair pseudo_render(const PointCloud& cloud, const Viewpoint& vp, const Intrinsics& intr,
                         int out_size, int upsample) {
    if (!cloud.confidence.empty() && cloud.confidence.size() != cloud.points.size())
        throw DimensionError("pseudo_render: confidence length does not match point count");
    if (cloud.empty()) return RenderPair::background(out_size, kFarDepth);
    const double* xyz = cloud.points.front().data();
    const double* w = cloud.confidence.empty() ? nullptr : cloud.confidence.data();
    return rasterize(xyz, 3, w, static_cast<std::int64_t>(cloud.size()), vp, intr, out_size,
                     upsample, DepthPool::average, false)
        .pair;
}

Tensor pseudo_render_diff(const Tensor& cloud, const Viewpoint& vp, const Intrinsics& intr,
                          int out_size, int upsample) {
    if (cloud.rank() != 2 || cloud.dim(1) != 4)
        throw DimensionError("pseudo_render_diff: cloud must be [P,4] (x,y,z,weight)");
    const std::int64_t P = cloud.dim(0);
    const std::int64_t S = out_size;

    // Split the strided columns: rasterize wants xyz rows and a weight array.
    std::vector<double> weights(static_cast<std::size_t>(P));
    for (std::int64_t i = 0; i < P; ++i) weights[static_cast<std::size_t>(i)] = cloud.data()[i * 4 + 3];

    RasterOutput ro = rasterize(cloud.data().data(), 4, weights.data(), P, vp, intr, out_size,
                                upsample, DepthPool::average, true);

    std::vector<double> out(static_cast<std::size_t>(2 * S * S));
    std::copy(ro.pair.depth.begin(), ro.pair.depth.end(), out.begin());
    std::copy(ro.pair.mask.begin(), ro.pair.mask.end(), out.begin() + S * S);

    Tensor result = make_tensor({2, S, S}, std::move(out));
    const Eigen::RowVector3d r2 = vp.R.row(2);
    attach_node(
        result, {cloud},
        [cloud, S, r2, offsets = std::move(ro.winner_offsets),
         winners = std::move(ro.depth_winners), argmax = std::move(ro.mask_argmax)](
            detail::TensorImpl& o) {
            if (!cloud.requires_grad()) return;
            double* g = cloud.impl()->grad_data();
            const double* gdepth = o.grad.data();
            const double* gmask = o.grad.data() + S * S;
            const std::int64_t n_pix = S * S;
            for (std::int64_t pix = 0; pix < n_pix; ++pix) {
                const std::int64_t lo = offsets[static_cast<std::size_t>(pix)];
                const std::int64_t hiw = offsets[static_cast<std::size_t>(pix) + 1];
                if (hiw > lo) {
                    // depth = (1/c) * sum over occupied bins of (R.row(2)·p_w + t_z)
                    const double scale = gdepth[pix] / static_cast<double>(hiw - lo);
                    for (std::int64_t k = lo; k < hiw; ++k) {
                        const std::int64_t w = winners[static_cast<std::size_t>(k)];
                        g[w * 4 + 0] += scale * r2.x();
                        g[w * 4 + 1] += scale * r2.y();
                        g[w * 4 + 2] += scale * r2.z();
                    }
                }
                const std::int64_t mi = argmax[static_cast<std::size_t>(pix)];
                if (mi >= 0) g[mi * 4 + 3] += gmask[pix];
            }
        },
        "pseudo_render");
    return result;
}

RenderPair render_dense_cloud(const PointCloud& dense, const Viewpoint& vp,
                              const Intrinsics& intr, int out_size, int upsample) {
    if (dense.empty()) return RenderPair::background(out_size, kFarDepth);
    RasterOutput ro = rasterize(dense.points.front().data(), 3, nullptr,
                                static_cast<std::int64_t>(dense.size()), vp, intr, out_size,
                                upsample, DepthPool::minimum, false);
    return ro.pair;
}

DenseRender render_dense_cloud_winners(const PointCloud& dense, const Viewpoint& vp,
                                       const Intrinsics& intr, int out_size, int upsample) {
    DenseRender dr;
    if (dense.empty()) {
        dr.pair = RenderPair::background(out_size, kFarDepth);
        dr.winners.assign(static_cast<std::size_t>(out_size) * out_size, -1);
        return dr;
    }
    RasterOutput ro = rasterize(dense.points.front().data(), 3, nullptr,
                                static_cast<std::int64_t>(dense.size()), vp, intr, out_size,
                                upsample, DepthPool::minimum, true);
    dr.pair = std::move(ro.pair);
    dr.winners = std::move(ro.depth_pick);
    return dr;
}

RenderPair render_ground_truth(const GroundTruthShape& shape, const Viewpoint& vp,
                               const Intrinsics& intr, int out_size) {
    if (shape.render_samples.empty())
        throw ConfigError("render_ground_truth: shape has no dense render sampling");
    return render_dense_cloud(shape.render_samples, vp, intr, out_size, kGroundTruthUpsample);
}

} // namespace semd
