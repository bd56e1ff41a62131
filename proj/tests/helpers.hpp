#pragma once

#include "semd/rng.hpp"
#include "semd/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace semd::testing {

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                          bool requires_grad = true) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Central finite-difference check of a scalar-valued function against the
// reverse-mode gradients of `inputs`. Returns the max relative error with
// denominator max(|analytic|, |numeric|, floor).
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                        std::vector<Tensor> inputs, double h = 1e-5, double floor_ = 1e-4) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = fn(inputs);
    backward(loss);

    double worst = 0.0;
    NoGradGuard ng;
    for (auto& t : inputs) {
        auto data = t.mutable_data();
        auto grad = t.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double up = fn(inputs).item();
            data[i] = keep - h;
            const double down = fn(inputs).item();
            data[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor_});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "semd-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace semd::testing
