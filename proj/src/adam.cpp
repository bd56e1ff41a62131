#include "semd/adam.hpp"

#include "semd/errors.hpp"

#include <cmath>

namespace semd {

AdamState AdamState::create(const std::vector<Tensor>& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
        s.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        s.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
    return s;
}

void adam_step(AdamState& state, std::vector<Tensor>& params) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ConfigError("adam_step: optimizer state does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad())
            throw UninitializedGradientError("adam_step: parameter " + std::to_string(i) +
                                             " has no gradient");
        if (state.m[i].size() != params[i].data().size())
            throw DimensionError("adam_step: moment buffer size mismatch for parameter " +
                                 std::to_string(i));
    }

    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const std::span<const double> g = p.grad();
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        const std::span<double> w = p.mutable_data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor& p : params) {
        if (!p.has_grad())
            throw UninitializedGradientError("clip_grad_norm: parameter has no gradient");
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (Tensor& p : params)
            for (double& g : p.mutable_grad()) g *= scale;
    }
    return norm;
}

} // namespace semd
