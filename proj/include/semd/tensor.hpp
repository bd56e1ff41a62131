#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semd/errors.hpp"

namespace semd {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` reads the output's gradient and
// accumulates (+=) into the gradients of `inputs`.
struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(TensorImpl& out)> backward;
    const char* name = "";
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // empty until first accumulation
    std::shared_ptr<Node> producer;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    // Gradient buffer, zero-initialized on first use.
    double* grad_data() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad.data();
    }
};

} // namespace detail

// Dense N-dimensional array of doubles with optional reverse-mode gradient
// tracking. Value-semantic handle: copies share the underlying storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return impl_->numel(); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() { impl_->grad_data(); return impl_->grad; }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }
    void drop_grad() { impl_->grad.clear(); }

    // Element access by multi-index (row-major).
    double at(std::initializer_list<std::int64_t> idx) const;
    double& at_mut(std::initializer_list<std::int64_t> idx);

    // Value of a single-element tensor.
    double item() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

// Construct a tensor (internal helper shared by op implementations).
Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

// Attach an op record to `out` if gradients are enabled and any input
// requires them; marks `out` as requiring grad in that case.
void attach_node(Tensor& out, std::vector<Tensor> inputs,
                 std::function<void(detail::TensorImpl&)> backward,
                 const char* name);

// Reverse-mode sweep from a scalar loss. Populates the gradient of every
// tensor reachable from `loss` that requires one. Gradients accumulate;
// callers zero them between sweeps.
void backward(const Tensor& loss);

bool grad_enabled();

// Disables op recording for its lifetime (forward-only evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- elementwise and reduction ops (all differentiable) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);  // -> scalar
Tensor mean(const Tensor& a); // -> scalar

// ---- shape ops ----

Tensor reshape(const Tensor& a, Shape new_shape);
// Contiguous slice of length `len` starting at `start` along `axis`.
Tensor narrow(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

} // namespace semd
