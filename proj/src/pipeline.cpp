#include "semd/pipeline.hpp"

#include "semd/adam.hpp"
#include "semd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace semd {

namespace {

// Fused loss for the direct-regression stage. pred is one decoder's raw
// output [B, V*4, S, S]; targets holds B*V fixed-view render pairs in
// batch-major order. Per (item, view): pixel-mean BCE on the mask channel
// plus mean L1 over GT-foreground pixels on the u/v/depth channels, where
// the u/v targets are the pixel-center ramps. Result is the batch mean of
// the per-view sums; mask_acc/depth_acc receive the detached parts.
Tensor coordimage_regression_loss(const Tensor& pred, std::vector<const RenderPair*> targets,
                                  std::shared_ptr<const std::vector<double>> ramp_u,
                                  std::shared_ptr<const std::vector<double>> ramp_v,
                                  double* mask_acc, double* depth_acc) {
    if (pred.rank() != 4) throw RankError("coordimage_regression_loss: pred must be rank 4");
    const std::int64_t B = pred.dim(0);
    const std::int64_t C = pred.dim(1);
    const std::int64_t S = pred.dim(2);
    if (pred.dim(3) != S) throw DimensionError("coordimage_regression_loss: non-square maps");
    if (C % 4 != 0) throw DimensionError("coordimage_regression_loss: channels not a multiple of 4");
    const std::int64_t V = C / 4;
    if (static_cast<std::int64_t>(targets.size()) != B * V)
        throw DimensionError("coordimage_regression_loss: target count mismatch");
    const std::int64_t plane = S * S;
    for (const RenderPair* t : targets) {
        if (t->size != S) throw DimensionError("coordimage_regression_loss: target size mismatch");
    }

    const double* x = pred.data().data();
    double total = 0.0, mask_total = 0.0, depth_total = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t v = 0; v < V; ++v) {
            const RenderPair& t = *targets[static_cast<std::size_t>(b * V + v)];
            const double* pu = x + (b * C + v * 4) * plane;
            const double* pv = pu + plane;
            const double* pz = pu + 2 * plane;
            const double* pm = pu + 3 * plane;
            double bce = 0.0;
            double l1 = 0.0;
            std::int64_t fg = 0;
            for (std::int64_t p = 0; p < plane; ++p) {
                const double c = std::clamp(pm[p], kProbClamp, 1.0 - kProbClamp);
                const double tm = t.mask[static_cast<std::size_t>(p)];
                bce -= tm * std::log(c) + (1.0 - tm) * std::log(1.0 - c);
                if (tm >= 0.5) {
                    ++fg;
                    l1 += std::abs(pu[p] - (*ramp_u)[static_cast<std::size_t>(p)]) +
                          std::abs(pv[p] - (*ramp_v)[static_cast<std::size_t>(p)]) +
                          std::abs(pz[p] - t.depth[static_cast<std::size_t>(p)]);
                }
            }
            bce /= static_cast<double>(plane);
            if (fg > 0) l1 /= static_cast<double>(fg);
            mask_total += bce;
            depth_total += l1;
            total += bce + l1;
        }
    }
    total /= static_cast<double>(B);
    if (mask_acc) *mask_acc += mask_total / static_cast<double>(B);
    if (depth_acc) *depth_acc += depth_total / static_cast<double>(B);

    Tensor out = make_tensor({1}, {total});
    attach_node(
        out, {pred},
        [targets = std::move(targets), ramp_u = std::move(ramp_u), ramp_v = std::move(ramp_v), B, C,
         S, V, plane](detail::TensorImpl& o) {
            const double g = o.grad[0] / static_cast<double>(B);
            auto& in = *o.producer->inputs[0];
            if (!in.requires_grad) return;
            double* gx = in.grad_data();
            const double* x = in.data.data();
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t v = 0; v < V; ++v) {
                    const RenderPair& t = *targets[static_cast<std::size_t>(b * V + v)];
                    const std::int64_t base = (b * C + v * 4) * plane;
                    std::int64_t fg = 0;
                    for (std::int64_t p = 0; p < plane; ++p)
                        if (t.mask[static_cast<std::size_t>(p)] >= 0.5) ++fg;
                    const double wfg = fg > 0 ? g / static_cast<double>(fg) : 0.0;
                    for (std::int64_t p = 0; p < plane; ++p) {
                        const double tm = t.mask[static_cast<std::size_t>(p)];
                        const double raw = x[base + 3 * plane + p];
                        if (raw > kProbClamp && raw < 1.0 - kProbClamp) {
                            gx[base + 3 * plane + p] +=
                                g * (raw - tm) / (raw * (1.0 - raw)) / static_cast<double>(plane);
                        }
                        if (tm >= 0.5) {
                            const double du =
                                x[base + p] - (*ramp_u)[static_cast<std::size_t>(p)];
                            const double dv =
                                x[base + plane + p] - (*ramp_v)[static_cast<std::size_t>(p)];
                            const double dz =
                                x[base + 2 * plane + p] - t.depth[static_cast<std::size_t>(p)];
                            gx[base + p] += wfg * (du > 0 ? 1.0 : (du < 0 ? -1.0 : 0.0));
                            gx[base + plane + p] += wfg * (dv > 0 ? 1.0 : (dv < 0 ? -1.0 : 0.0));
                            gx[base + 2 * plane + p] += wfg * (dz > 0 ? 1.0 : (dz < 0 ? -1.0 : 0.0));
                        }
                    }
                }
            }
        },
        "coord_regression");
    return out;
}

struct BatchDraw {
    std::vector<const DatasetEntry*> items;
    Tensor input;
};

const DatasetEntry* draw_item(const std::vector<DatasetEntry>& dataset, Rng& rng) {
    return &dataset[static_cast<std::size_t>(rng.uniform_index(
        static_cast<std::int64_t>(dataset.size())))];
}

BatchDraw draw_batch(const std::vector<DatasetEntry>& dataset, std::int64_t batch, Rng& rng,
                     std::int64_t input_size) {
    BatchDraw out;
    const std::int64_t chw = 3 * input_size * input_size;
    std::vector<double> buf(static_cast<std::size_t>(batch * chw));
    for (std::int64_t b = 0; b < batch; ++b) {
        const DatasetEntry* e = draw_item(dataset, rng);
        if (e->input_renders.empty())
            throw ConfigError("training entry '" + e->model_id + "' has no input renders");
        const auto& img = e->input_renders[static_cast<std::size_t>(
            rng.uniform_index(static_cast<std::int64_t>(e->input_renders.size())))];
        if (static_cast<std::int64_t>(img.size()) != chw)
            throw DimensionError("input render size does not match the network input size");
        std::copy(img.begin(), img.end(), buf.begin() + static_cast<std::ptrdiff_t>(b * chw));
        out.items.push_back(e);
    }
    out.input = make_tensor({batch, 3, input_size, input_size}, std::move(buf));
    return out;
}

void check_dataset(const SEMDNetwork& net, const std::vector<DatasetEntry>& dataset) {
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    for (const auto& e : dataset) {
        if (e.input_size != net.config.input_size || e.output_size != net.config.output_size) {
            std::ostringstream os;
            os << "entry '" << e.model_id << "' sizes (" << e.input_size << ", " << e.output_size
               << ") do not match the network (" << net.config.input_size << ", "
               << net.config.output_size << ")";
            throw ConfigError(os.str());
        }
    }
}

void dump_diagnostics(SEMDNetwork& net, const std::string& path) {
    if (path.empty()) return;
    try {
        save_network(path, net);
    } catch (const Error&) {
        // The abort below already reports the divergence; a failed dump
        // should not mask it.
    }
}

std::shared_ptr<std::vector<double>> pixel_ramp(std::int64_t size, bool horizontal) {
    auto ramp = std::make_shared<std::vector<double>>(static_cast<std::size_t>(size * size));
    for (std::int64_t r = 0; r < size; ++r)
        for (std::int64_t c = 0; c < size; ++c)
            (*ramp)[static_cast<std::size_t>(r * size + c)] =
                (horizontal ? static_cast<double>(c) : static_cast<double>(r)) + 0.5;
    return ramp;
}

} // namespace

void TrainConfig::validate() const {
    if (8 % n_decoders != 0) throw ConfigError("n_decoders must divide 8");
    if (pretrain_lr <= 0.0 || finetune_lr <= 0.0) throw ConfigError("learning rates must be positive");
    if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
    if (supervision_view_count < 1 || supervision_view_count > 100)
        throw ConfigError("supervision_view_count must be in [1, 100]");
    if (pretrain_iters < 0 || finetune_iters < 0) throw ConfigError("iteration counts must be non-negative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch norm)");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0))
        throw ConfigError("mask_threshold must lie in (0, 1)");
    if (grad_clip_norm <= 0.0) throw ConfigError("grad_clip_norm must be positive");
    if (render_upsample < 1) throw ConfigError("render_upsample must be at least 1");
}

std::vector<LossRecord> pretrain(SEMDNetwork& net, const std::vector<DatasetEntry>& dataset,
                                 const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(net, dataset);
    const std::int64_t S_out = net.config.output_size;
    const int Vd = net.config.views_per_decoder();

    auto params = net.parameters();
    AdamState opt = AdamState::create(params, cfg.pretrain_lr);
    Rng rng(cfg.seed);
    auto ramp_u = pixel_ramp(S_out, true);
    auto ramp_v = pixel_ramp(S_out, false);

    std::vector<LossRecord> log;
    log.reserve(static_cast<std::size_t>(cfg.pretrain_iters));
    for (std::int64_t iter = 0; iter < cfg.pretrain_iters; ++iter) {
        BatchDraw batch = draw_batch(dataset, cfg.batch_size, rng, net.config.input_size);
        auto outs = forward_raw(batch.input, net, true);

        double mask_part = 0.0, depth_part = 0.0;
        Tensor loss;
        for (int d = 0; d < net.config.n_decoders; ++d) {
            std::vector<const RenderPair*> targets;
            targets.reserve(static_cast<std::size_t>(cfg.batch_size * Vd));
            for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
                const auto& fixed = batch.items[static_cast<std::size_t>(b)]->fixed_views();
                for (int v = 0; v < Vd; ++v)
                    targets.push_back(&fixed[static_cast<std::size_t>(d * Vd + v)]);
            }
            Tensor part = coordimage_regression_loss(outs[static_cast<std::size_t>(d)],
                                                     std::move(targets), ramp_u, ramp_v,
                                                     &mask_part, &depth_part);
            loss = loss.defined() ? add(loss, part) : part;
        }

        const double value = loss.item();
        if (!std::isfinite(value)) {
            dump_diagnostics(net, cfg.diagnostics_path);
            std::ostringstream os;
            os << "pretrain diverged at iteration " << iter << " (loss " << value << ")";
            if (!cfg.diagnostics_path.empty()) os << "; state dumped to " << cfg.diagnostics_path;
            throw TrainingError(os.str());
        }
        for (auto& p : params) p.zero_grad();
        backward(loss);
        adam_step(opt, params);
        log.push_back({iter, value, mask_part, depth_part});
    }
    return log;
}

std::vector<LossRecord> finetune(SEMDNetwork& net, const std::vector<DatasetEntry>& dataset,
                                 const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(net, dataset);
    const std::int64_t S_out = net.config.output_size;
    const int Vd = net.config.views_per_decoder();
    const Intrinsics intr = Intrinsics::for_image(S_out);
    for (const auto& e : dataset) {
        if (e.supervision_viewpoints.empty())
            throw ConfigError("entry '" + e.model_id + "' has no supervision views");
        if (e.fixed_viewpoints.size() != 8)
            throw ConfigError("entry '" + e.model_id + "' does not carry the 8 fixed viewpoints");
    }

    auto params = net.parameters();
    AdamState opt = AdamState::create(params, cfg.finetune_lr);
    Rng rng(cfg.seed);

    constexpr int kMaxConsecutiveEmpty = 100;
    int consecutive_empty = 0;
    std::vector<LossRecord> log;
    log.reserve(static_cast<std::size_t>(cfg.finetune_iters));
    for (std::int64_t iter = 0; iter < cfg.finetune_iters; ++iter) {
        BatchDraw batch = draw_batch(dataset, cfg.batch_size, rng, net.config.input_size);
        auto outs = forward_raw(batch.input, net, true);

        Tensor batch_loss;
        int used = 0;
        double mask_part = 0.0, depth_part = 0.0;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
            const DatasetEntry& entry = *batch.items[static_cast<std::size_t>(b)];
            std::vector<Tensor> grids;
            grids.reserve(8);
            for (int d = 0; d < net.config.n_decoders; ++d)
                for (int v = 0; v < Vd; ++v)
                    grids.push_back(view_grid(outs[static_cast<std::size_t>(d)], b, v));
            auto cloud =
                fuse_viewpoints_diff(grids, entry.fixed_viewpoints, intr, cfg.mask_threshold);
            // Draw the supervision views regardless so the RNG stream does
            // not depend on which items fused to something.
            std::vector<std::int64_t> picks(static_cast<std::size_t>(cfg.supervision_view_count));
            for (auto& k : picks)
                k = rng.uniform_index(
                    static_cast<std::int64_t>(entry.supervision_viewpoints.size()));
            if (!cloud.has_value()) continue;

            std::vector<Tensor> preds;
            std::vector<RenderPair> gts;
            preds.reserve(picks.size());
            gts.reserve(picks.size());
            const auto& sup = entry.supervision();
            for (std::int64_t k : picks) {
                preds.push_back(pseudo_render_diff(*cloud,
                                                   entry.supervision_viewpoints[static_cast<std::size_t>(k)],
                                                   intr, static_cast<int>(S_out),
                                                   cfg.render_upsample));
                gts.push_back(sup[static_cast<std::size_t>(k)]);
            }
            LossBreakdown bd;
            Tensor item_loss = joint_loss(preds, gts, cfg.lambda, &bd);
            batch_loss = batch_loss.defined() ? add(batch_loss, item_loss) : item_loss;
            mask_part += bd.mask_loss;
            depth_part += bd.depth_loss;
            ++used;
        }

        if (used == 0) {
            if (++consecutive_empty >= kMaxConsecutiveEmpty) {
                dump_diagnostics(net, cfg.diagnostics_path);
                std::ostringstream os;
                os << "finetune aborted at iteration " << iter << ": " << kMaxConsecutiveEmpty
                   << " consecutive iterations fused to empty clouds";
                throw TrainingError(os.str());
            }
            continue;
        }
        consecutive_empty = 0;

        Tensor loss = mul_scalar(batch_loss, 1.0 / static_cast<double>(used));
        const double value = loss.item();
        if (!std::isfinite(value)) {
            dump_diagnostics(net, cfg.diagnostics_path);
            std::ostringstream os;
            os << "finetune diverged at iteration " << iter << " (loss " << value << ")";
            if (!cfg.diagnostics_path.empty()) os << "; state dumped to " << cfg.diagnostics_path;
            throw TrainingError(os.str());
        }
        for (auto& p : params) p.zero_grad();
        backward(loss);
        clip_grad_norm(params, cfg.grad_clip_norm);
        adam_step(opt, params);
        log.push_back({iter, value, mask_part / static_cast<double>(used),
                       depth_part / static_cast<double>(used)});
    }
    return log;
}

PointCloud infer(SEMDNetwork& net, const Tensor& image, double mask_threshold, bool* empty_flag) {
    auto views = forward(image, net);
    const auto vps = cube_corner_viewpoints(kDefaultCameraRadius);
    const Intrinsics intr = Intrinsics::for_image(net.config.output_size);
    bool all_empty = false;
    PointCloud cloud = fuse_viewpoints(views, vps, intr, mask_threshold, &all_empty);
    if (empty_flag) *empty_flag = all_empty;
    return cloud;
}

EvalResult evaluate(SEMDNetwork& net, const std::vector<DatasetEntry>& dataset,
                    std::int64_t n_points, std::uint64_t seed) {
    check_dataset(net, dataset);
    EvalResult res;
    double e_pg = 0.0, e_gp = 0.0, ch = 0.0, em = 0.0;
    double np = 0.0, ng = 0.0;
    for (const auto& entry : dataset) {
        if (entry.input_renders.empty()) {
            ++res.failures;
            continue;
        }
        Tensor img = make_image_tensor(entry.input_renders[0], entry.input_size);
        PointCloud pred = infer(net, img);
        try {
            MetricReport r = compute_metrics(pred, entry.shape.surface_samples, n_points, seed);
            res.rows.emplace_back(entry.model_id, r);
            e_pg += r.euclid_pred_to_gt;
            e_gp += r.euclid_gt_to_pred;
            ch += r.chamfer;
            em += r.emd;
            np += static_cast<double>(r.pred_points);
            ng += static_cast<double>(r.gt_points);
        } catch (const UndefinedMetricError&) {
            ++res.failures;
        }
    }
    if (!res.rows.empty()) {
        const double n = static_cast<double>(res.rows.size());
        res.mean.euclid_pred_to_gt = e_pg / n;
        res.mean.euclid_gt_to_pred = e_gp / n;
        res.mean.chamfer = ch / n;
        res.mean.emd = em / n;
        res.mean.pred_points = static_cast<std::int64_t>(np / n);
        res.mean.gt_points = static_cast<std::int64_t>(ng / n);
    }
    return res;
}

Tensor make_image_tensor(const std::vector<double>& chw, std::int64_t size) {
    if (static_cast<std::int64_t>(chw.size()) != 3 * size * size)
        throw DimensionError("image buffer does not hold 3 x size x size values");
    return make_tensor({1, 3, size, size}, chw);
}

} // namespace semd
