#include "semd/loss.hpp"

#include "semd/errors.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace semd {

namespace {

// Pixel-mean binary cross-entropy of one view against a constant binary
// target, with the prediction clamped away from {0,1}.
Tensor bce_mean(const Tensor& pred, const std::vector<double>& target) {
    if (pred.numel() != static_cast<std::int64_t>(target.size()))
        throw DimensionError("mask_loss: prediction/target size mismatch");
    const std::size_t n = target.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double lo = kProbClamp, hi = 1.0 - kProbClamp;

    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pred.data()[i], lo, hi);
        const double m = target[i];
        acc += -(m * std::log(p) + (1.0 - m) * std::log(1.0 - p));
    }
    Tensor result = Tensor::scalar(acc * inv_n);
    attach_node(
        result, {pred},
        [pred, target, inv_n, lo, hi](detail::TensorImpl& o) {
            if (!pred.requires_grad()) return;
            const double go = o.grad[0] * inv_n;
            double* g = pred.impl()->grad_data();
            for (std::size_t i = 0; i < target.size(); ++i) {
                const double raw = pred.impl()->data[i];
                if (raw < lo || raw > hi) continue; // clamped flat
                g[i] += go * (-target[i] / raw + (1.0 - target[i]) / (1.0 - raw));
            }
        },
        "bce_mean");
    return result;
}

// Mean absolute depth error over the view's GT-foreground pixels.
Tensor l1_foreground(const Tensor& pred, const RenderPair& gt, bool* empty_fg) {
    if (pred.numel() != static_cast<std::int64_t>(gt.depth.size()))
        throw DimensionError("depth_loss: prediction/target size mismatch");
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < gt.mask.size(); ++i)
        if (gt.mask[i] >= 0.5) fg.push_back(i);
    if (empty_fg) *empty_fg = fg.empty();
    if (fg.empty()) return Tensor::scalar(0.0);

    const double inv_n = 1.0 / static_cast<double>(fg.size());
    double acc = 0.0;
    for (std::size_t i : fg) acc += std::abs(pred.data()[i] - gt.depth[i]);
    Tensor result = Tensor::scalar(acc * inv_n);
    attach_node(
        result, {pred},
        [pred, gt_depth = gt.depth, fg = std::move(fg), inv_n](detail::TensorImpl& o) {
            if (!pred.requires_grad()) return;
            const double go = o.grad[0] * inv_n;
            double* g = pred.impl()->grad_data();
            for (std::size_t i : fg) {
                const double d = pred.impl()->data[i] - gt_depth[i];
                if (d > 0.0)
                    g[i] += go;
                else if (d < 0.0)
                    g[i] -= go;
            }
        },
        "l1_foreground");
    return result;
}

void check_views(std::size_t pred, std::size_t gt, const char* what) {
    if (pred != gt)
        throw DimensionError(std::string(what) + ": got " + std::to_string(pred) +
                             " predictions for " + std::to_string(gt) + " supervision views");
}

} // namespace

Tensor mask_loss(const std::vector<Tensor>& pred_masks, const std::vector<RenderPair>& gt) {
    check_views(pred_masks.size(), gt.size(), "mask_loss");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < gt.size(); ++k) total = add(total, bce_mean(pred_masks[k], gt[k].mask));
    return total;
}

Tensor depth_loss(const std::vector<Tensor>& pred_depths, const std::vector<RenderPair>& gt) {
    check_views(pred_depths.size(), gt.size(), "depth_loss");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < gt.size(); ++k)
        total = add(total, l1_foreground(pred_depths[k], gt[k], nullptr));
    return total;
}

Tensor joint_loss(const std::vector<Tensor>& pred_views, const std::vector<RenderPair>& gt_views,
                  double lambda, LossBreakdown* breakdown) {
    check_views(pred_views.size(), gt_views.size(), "joint_loss");
    if (lambda < 0.0) throw ConfigError("joint_loss: lambda must be >= 0");

    Tensor mask_total = Tensor::scalar(0.0);
    Tensor depth_total = Tensor::scalar(0.0);
    if (breakdown) {
        breakdown->per_view.clear();
        breakdown->empty_foreground_views = 0;
    }
    for (std::size_t k = 0; k < gt_views.size(); ++k) {
        const Tensor& pv = pred_views[k];
        if (pv.rank() != 3 || pv.dim(0) != 2)
            throw DimensionError("joint_loss: each prediction must be [2,S,S]");
        Tensor depth_plane = narrow(pv, 0, 0, 1);
        Tensor mask_plane = narrow(pv, 0, 1, 1);
        bool empty_fg = false;
        Tensor mk = bce_mean(mask_plane, gt_views[k].mask);
        Tensor dk = l1_foreground(depth_plane, gt_views[k], &empty_fg);
        if (breakdown) {
            breakdown->per_view.emplace_back(mk.item(), dk.item());
            if (empty_fg) breakdown->empty_foreground_views += 1;
        }
        mask_total = add(mask_total, mk);
        depth_total = add(depth_total, dk);
    }
    Tensor total = add(mask_total, mul_scalar(depth_total, lambda));
    if (breakdown) {
        breakdown->mask_loss = mask_total.item();
        breakdown->depth_loss = depth_total.item();
        breakdown->total = total.item();
    }
    return total;
}

void append_loss_log(const std::string& path, const std::vector<LossRecord>& records) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw IoError("cannot open '" + path + "' for appending");
    os.precision(12);
    for (const LossRecord& r : records)
        os << r.iter << ',' << r.total << ',' << r.mask << ',' << r.depth << '\n';
    if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<LossRecord> read_loss_log(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    std::vector<LossRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        LossRecord r;
        char c1, c2, c3;
        if (!(ls >> r.iter >> c1 >> r.total >> c2 >> r.mask >> c3 >> r.depth) || c1 != ',' ||
            c2 != ',' || c3 != ',')
            throw CorruptContainerError("'" + path + "': malformed loss-log line: " + line);
        out.push_back(r);
    }
    return out;
}

} // namespace semd
