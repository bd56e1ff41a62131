#include "semd/nn.hpp"

#include <Eigen/Core>

#include <cmath>

namespace semd {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

constexpr int kKernel = 3;
constexpr int kPad = 1;

// Unfold one [C,H,W] image into a (C*9) x (Ho*Wo) patch matrix for a 3x3
// kernel with padding 1 and the given stride.
void im2col(const double* img, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t Ho, std::int64_t Wo, int stride, double* col) {
    const std::int64_t plane = H * W;
    const std::int64_t out_plane = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c) {
        const double* src = img + c * plane;
        for (int ky = 0; ky < kKernel; ++ky) {
            for (int kx = 0; kx < kKernel; ++kx) {
                double* dst = col + ((c * kKernel + ky) * kKernel + kx) * out_plane;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    const std::int64_t y = oy * stride + ky - kPad;
                    double* row = dst + oy * Wo;
                    if (y < 0 || y >= H) {
                        std::fill(row, row + Wo, 0.0);
                        continue;
                    }
                    const double* src_row = src + y * W;
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const std::int64_t x = ox * stride + kx - kPad;
                        row[ox] = (x >= 0 && x < W) ? src_row[x] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch matrix back onto a [C,H,W] image (adjoint of im2col).
void col2im_add(const double* col, std::int64_t C, std::int64_t H, std::int64_t W,
                std::int64_t Ho, std::int64_t Wo, int stride, double* img) {
    const std::int64_t plane = H * W;
    const std::int64_t out_plane = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c) {
        double* dst_plane = img + c * plane;
        for (int ky = 0; ky < kKernel; ++ky) {
            for (int kx = 0; kx < kKernel; ++kx) {
                const double* src = col + ((c * kKernel + ky) * kKernel + kx) * out_plane;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    const std::int64_t y = oy * stride + ky - kPad;
                    if (y < 0 || y >= H) continue;
                    const double* src_row = src + oy * Wo;
                    double* dst_row = dst_plane + y * W;
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const std::int64_t x = ox * stride + kx - kPad;
                        if (x >= 0 && x < W) dst_row[x] += src_row[ox];
                    }
                }
            }
        }
    }
}

void require(bool ok, const char* msg) {
    if (!ok) throw DimensionError(msg);
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
    require(input.rank() == 4, "conv2d: input must be [B,C,H,W]");
    require(weight.rank() == 4 && weight.dim(2) == kKernel && weight.dim(3) == kKernel,
            "conv2d: weight must be [F,C,3,3]");
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "conv2d: bias must be [F]");
    if (input.dim(1) != weight.dim(1))
        throw DimensionError("conv2d: input channels " + std::to_string(input.dim(1)) +
                             " do not match weight channels " + std::to_string(weight.dim(1)));
    if (stride != 1 && stride != 2) throw DimensionError("conv2d: stride must be 1 or 2");
    const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (stride == 2 && (H % 2 != 0 || W % 2 != 0))
        throw DimensionError("conv2d: stride-2 requires even spatial dims");
    const std::int64_t F = weight.dim(0);
    const std::int64_t Ho = (H + 2 * kPad - kKernel) / stride + 1;
    const std::int64_t Wo = (W + 2 * kPad - kKernel) / stride + 1;
    const std::int64_t K = C * kKernel * kKernel;
    const std::int64_t P = Ho * Wo;

    std::vector<double> out(static_cast<std::size_t>(B * F * P));
    std::vector<double> col(static_cast<std::size_t>(K * P));
    ConstMapRM wmat(weight.data().data(), F, K);
    for (std::int64_t b = 0; b < B; ++b) {
        im2col(input.data().data() + b * C * H * W, C, H, W, Ho, Wo, stride, col.data());
        ConstMapRM cmat(col.data(), K, P);
        MapRM omat(out.data() + b * F * P, F, P);
        omat.noalias() = wmat * cmat;
        for (std::int64_t f = 0; f < F; ++f) omat.row(f).array() += bias.data()[static_cast<std::size_t>(f)];
    }

    Tensor result = make_tensor({B, F, Ho, Wo}, std::move(out));
    attach_node(
        result, {input, weight, bias},
        [input, weight, bias, B, C, H, W, F, Ho, Wo, K, P, stride](detail::TensorImpl& o) {
            std::vector<double> col(static_cast<std::size_t>(K * P));
            ConstMapRM wmat(weight.impl()->data.data(), F, K);
            for (std::int64_t b = 0; b < B; ++b) {
                ConstMapRM gout(o.grad.data() + b * F * P, F, P);
                if (input.requires_grad() || weight.requires_grad()) {
                    im2col(input.impl()->data.data() + b * C * H * W, C, H, W, Ho, Wo, stride, col.data());
                }
                if (weight.requires_grad()) {
                    ConstMapRM cmat(col.data(), K, P);
                    MapRM gw(weight.impl()->grad_data(), F, K);
                    gw.noalias() += gout * cmat.transpose();
                }
                if (input.requires_grad()) {
                    MatrixRM gcol = wmat.transpose() * gout; // K x P
                    col2im_add(gcol.data(), C, H, W, Ho, Wo, stride,
                               input.impl()->grad_data() + b * C * H * W);
                }
                if (bias.requires_grad()) {
                    double* gb = bias.impl()->grad_data();
                    for (std::int64_t f = 0; f < F; ++f) gb[f] += gout.row(f).sum();
                }
            }
        },
        "conv2d");
    return result;
}

Tensor deconv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 4, "deconv2d: input must be [B,C,H,W]");
    require(weight.rank() == 4 && weight.dim(2) == kKernel && weight.dim(3) == kKernel,
            "deconv2d: weight must be [C,F,3,3]");
    if (input.dim(1) != weight.dim(0))
        throw DimensionError("deconv2d: input channels " + std::to_string(input.dim(1)) +
                             " do not match weight channels " + std::to_string(weight.dim(0)));
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(1), "deconv2d: bias must be [F]");
    const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::int64_t F = weight.dim(1);
    const std::int64_t Ho = 2 * H, Wo = 2 * W;
    const std::int64_t K = F * kKernel * kKernel;
    const std::int64_t P = H * W;
    const int stride = 2;

    // Transposed conv: col = W^T * x, then scatter (adjoint of im2col at
    // the *output* resolution with this stride).
    std::vector<double> out(static_cast<std::size_t>(B * F * Ho * Wo), 0.0);
    ConstMapRM wmat(weight.data().data(), C, K);
    for (std::int64_t b = 0; b < B; ++b) {
        ConstMapRM xmat(input.data().data() + b * C * P, C, P);
        MatrixRM colmat = wmat.transpose() * xmat; // K x P
        col2im_add(colmat.data(), F, Ho, Wo, H, W, stride, out.data() + b * F * Ho * Wo);
        double* oimg = out.data() + b * F * Ho * Wo;
        for (std::int64_t f = 0; f < F; ++f) {
            const double bv = bias.data()[static_cast<std::size_t>(f)];
            double* plane = oimg + f * Ho * Wo;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) plane[i] += bv;
        }
    }

    Tensor result = make_tensor({B, F, Ho, Wo}, std::move(out));
    attach_node(
        result, {input, weight, bias},
        [input, weight, bias, B, C, H, W, F, Ho, Wo, K, P, stride](detail::TensorImpl& o) {
            std::vector<double> col(static_cast<std::size_t>(K * P));
            ConstMapRM wmat(weight.impl()->data.data(), C, K);
            for (std::int64_t b = 0; b < B; ++b) {
                // dcol is im2col of the output gradient.
                im2col(o.grad.data() + b * F * Ho * Wo, F, Ho, Wo, H, W, stride, col.data());
                ConstMapRM dcol(col.data(), K, P);
                if (input.requires_grad()) {
                    MapRM gx(input.impl()->grad_data() + b * C * P, C, P);
                    gx.noalias() += wmat * dcol;
                }
                if (weight.requires_grad()) {
                    ConstMapRM xmat(input.impl()->data.data() + b * C * P, C, P);
                    MapRM gw(weight.impl()->grad_data(), C, K);
                    gw.noalias() += xmat * dcol.transpose();
                }
                if (bias.requires_grad()) {
                    double* gb = bias.impl()->grad_data();
                    const double* gimg = o.grad.data() + b * F * Ho * Wo;
                    for (std::int64_t f = 0; f < F; ++f) {
                        const double* plane = gimg + f * Ho * Wo;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < Ho * Wo; ++i) s += plane[i];
                        gb[f] += s;
                    }
                }
            }
        },
        "deconv2d");
    return result;
}

Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 4, "conv1x1: input must be [B,C,H,W]");
    require(weight.rank() == 2, "conv1x1: weight must be [F,C]");
    if (input.dim(1) != weight.dim(1)) throw DimensionError("conv1x1: channel mismatch");
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "conv1x1: bias must be [F]");
    const std::int64_t B = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
    const std::int64_t F = weight.dim(0);

    std::vector<double> out(static_cast<std::size_t>(B * F * P));
    ConstMapRM wmat(weight.data().data(), F, C);
    for (std::int64_t b = 0; b < B; ++b) {
        ConstMapRM xmat(input.data().data() + b * C * P, C, P);
        MapRM omat(out.data() + b * F * P, F, P);
        omat.noalias() = wmat * xmat;
        for (std::int64_t f = 0; f < F; ++f) omat.row(f).array() += bias.data()[static_cast<std::size_t>(f)];
    }

    Tensor result = make_tensor({B, F, input.dim(2), input.dim(3)}, std::move(out));
    attach_node(
        result, {input, weight, bias},
        [input, weight, bias, B, C, P, F](detail::TensorImpl& o) {
            ConstMapRM wmat(weight.impl()->data.data(), F, C);
            for (std::int64_t b = 0; b < B; ++b) {
                ConstMapRM gout(o.grad.data() + b * F * P, F, P);
                if (input.requires_grad()) {
                    MapRM gx(input.impl()->grad_data() + b * C * P, C, P);
                    gx.noalias() += wmat.transpose() * gout;
                }
                if (weight.requires_grad()) {
                    ConstMapRM xmat(input.impl()->data.data() + b * C * P, C, P);
                    MapRM gw(weight.impl()->grad_data(), F, C);
                    gw.noalias() += gout * xmat.transpose();
                }
                if (bias.requires_grad()) {
                    double* gb = bias.impl()->grad_data();
                    for (std::int64_t f = 0; f < F; ++f) gb[f] += gout.row(f).sum();
                }
            }
        },
        "conv1x1");
    return result;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 2, "linear: input must be [B,D]");
    require(weight.rank() == 2, "linear: weight must be [E,D]");
    if (input.dim(1) != weight.dim(1))
        throw DimensionError("linear: input dim " + std::to_string(input.dim(1)) +
                             " does not match weight dim " + std::to_string(weight.dim(1)));
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "linear: bias must be [E]");
    const std::int64_t B = input.dim(0), D = input.dim(1), E = weight.dim(0);

    std::vector<double> out(static_cast<std::size_t>(B * E));
    {
        ConstMapRM x(input.data().data(), B, D);
        ConstMapRM w(weight.data().data(), E, D);
        MapRM o(out.data(), B, E);
        o.noalias() = x * w.transpose();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t e = 0; e < E; ++e) o(b, e) += bias.data()[static_cast<std::size_t>(e)];
    }

    Tensor result = make_tensor({B, E}, std::move(out));
    attach_node(
        result, {input, weight, bias},
        [input, weight, bias, B, D, E](detail::TensorImpl& o) {
            ConstMapRM gout(o.grad.data(), B, E);
            if (input.requires_grad()) {
                ConstMapRM w(weight.impl()->data.data(), E, D);
                MapRM gx(input.impl()->grad_data(), B, D);
                gx.noalias() += gout * w;
            }
            if (weight.requires_grad()) {
                ConstMapRM x(input.impl()->data.data(), B, D);
                MapRM gw(weight.impl()->grad_data(), E, D);
                gw.noalias() += gout.transpose() * x;
            }
            if (bias.requires_grad()) {
                double* gb = bias.impl()->grad_data();
                for (std::int64_t e = 0; e < E; ++e) gb[e] += gout.col(e).sum();
            }
        },
        "linear");
    return result;
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 RunningStats& stats, bool training) {
    if (input.rank() != 2 && input.rank() != 4)
        throw DimensionError("batchnorm: input must be [B,D] or [B,C,H,W]");
    const std::int64_t B = input.dim(0);
    const std::int64_t C = input.dim(1);
    const std::int64_t S = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
    if (gamma.numel() != C || beta.numel() != C)
        throw DimensionError("batchnorm: gamma/beta must have one value per channel");
    if (static_cast<std::int64_t>(stats.mean.size()) != C)
        throw DimensionError("batchnorm: running stats channel mismatch");
    if (training && B < 2)
        throw DegenerateBatchError("batchnorm: training mode requires batch size >= 2, got " +
                                   std::to_string(B));

    const std::int64_t N = B * S; // reduction count per channel
    const double inv_n = 1.0 / static_cast<double>(N);
    const double eps = stats.epsilon;

    std::vector<double> mean_c(static_cast<std::size_t>(C));
    std::vector<double> var_c(static_cast<std::size_t>(C));
    if (training) {
        for (std::int64_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::int64_t b = 0; b < B; ++b) {
                const double* p = input.data().data() + (b * C + c) * S;
                for (std::int64_t i = 0; i < S; ++i) m += p[i];
            }
            m *= inv_n;
            double v = 0.0;
            for (std::int64_t b = 0; b < B; ++b) {
                const double* p = input.data().data() + (b * C + c) * S;
                for (std::int64_t i = 0; i < S; ++i) {
                    const double d = p[i] - m;
                    v += d * d;
                }
            }
            v *= inv_n;
            mean_c[static_cast<std::size_t>(c)] = m;
            var_c[static_cast<std::size_t>(c)] = v;
            stats.mean[static_cast<std::size_t>(c)] =
                (1.0 - stats.momentum) * stats.mean[static_cast<std::size_t>(c)] + stats.momentum * m;
            stats.var[static_cast<std::size_t>(c)] =
                (1.0 - stats.momentum) * stats.var[static_cast<std::size_t>(c)] + stats.momentum * v;
        }
    } else {
        mean_c = stats.mean;
        var_c = stats.var;
    }

    std::vector<double> out(input.data().size());
    std::vector<double> inv_std(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c)
        inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var_c[static_cast<std::size_t>(c)] + eps);
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const double* p = input.data().data() + (b * C + c) * S;
            double* q = out.data() + (b * C + c) * S;
            const double m = mean_c[static_cast<std::size_t>(c)];
            const double is = inv_std[static_cast<std::size_t>(c)];
            const double g = gamma.data()[static_cast<std::size_t>(c)];
            const double bt = beta.data()[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < S; ++i) q[i] = (p[i] - m) * is * g + bt;
        }
    }

    Tensor result = make_tensor(input.shape(), std::move(out));
    attach_node(
        result, {input, gamma, beta},
        [input, gamma, beta, B, C, S, N, inv_n, mean_c, inv_std, training](detail::TensorImpl& o) {
            // xhat = (x - mu) * inv_std;  y = gamma * xhat + beta
            for (std::int64_t c = 0; c < C; ++c) {
                const double m = mean_c[static_cast<std::size_t>(c)];
                const double is = inv_std[static_cast<std::size_t>(c)];
                const double g = gamma.data()[static_cast<std::size_t>(c)];

                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::int64_t b = 0; b < B; ++b) {
                    const double* x = input.impl()->data.data() + (b * C + c) * S;
                    const double* dy = o.grad.data() + (b * C + c) * S;
                    for (std::int64_t i = 0; i < S; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (x[i] - m) * is;
                    }
                }
                if (gamma.requires_grad()) gamma.impl()->grad_data()[c] += sum_dy_xhat;
                if (beta.requires_grad()) beta.impl()->grad_data()[c] += sum_dy;
                if (!input.requires_grad()) continue;

                double* gx_base = input.impl()->grad_data();
                if (training) {
                    for (std::int64_t b = 0; b < B; ++b) {
                        const double* x = input.impl()->data.data() + (b * C + c) * S;
                        const double* dy = o.grad.data() + (b * C + c) * S;
                        double* gx = gx_base + (b * C + c) * S;
                        for (std::int64_t i = 0; i < S; ++i) {
                            const double xhat = (x[i] - m) * is;
                            gx[i] += g * is * (dy[i] - inv_n * sum_dy - inv_n * xhat * sum_dy_xhat);
                        }
                    }
                } else {
                    for (std::int64_t b = 0; b < B; ++b) {
                        const double* dy = o.grad.data() + (b * C + c) * S;
                        double* gx = gx_base + (b * C + c) * S;
                        for (std::int64_t i = 0; i < S; ++i) gx[i] += g * is * dy[i];
                    }
                }
            }
            (void)N;
        },
        "batchnorm");
    return result;
}

} // namespace semd
