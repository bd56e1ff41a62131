#include "semd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace semd {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

thread_local int g_no_grad_depth = 0;

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

std::int64_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx) {
    if (idx.size() != shape.size())
        throw DimensionError("index rank mismatch: " + std::to_string(idx.size()) +
                             " vs tensor rank " + std::to_string(shape.size()));
    std::int64_t flat = 0;
    std::size_t i = 0;
    for (auto v : idx) {
        if (v < 0 || v >= shape[i]) throw IndexError("index out of range");
        flat = flat * shape[i] + v;
        ++i;
    }
    return flat;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// Elementwise unary op helper: out[i] = f(a[i]); backward df(a, out, i).
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd&& f, Bwd&& df) {
    const auto& x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    Tensor result = make_tensor(a.shape(), std::move(out));
    attach_node(
        result, {a},
        [a, df](detail::TensorImpl& o) {
            double* ga = a.impl()->grad_data();
            const auto& x = a.impl()->data;
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += o.grad[i] * df(x[i], o.data[i]);
        },
        name);
    return result;
}

} // namespace

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make_tensor({1}, {value}, requires_grad);
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    return impl_->data[static_cast<std::size_t>(flat_index(impl_->shape, idx))];
}

double& Tensor::at_mut(std::initializer_list<std::int64_t> idx) {
    return impl_->data[static_cast<std::size_t>(flat_index(impl_->shape, idx))];
}

double Tensor::item() const {
    if (numel() != 1) throw RankError("item() on tensor with " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void attach_node(Tensor& out, std::vector<Tensor> inputs,
                 std::function<void(detail::TensorImpl&)> backward,
                 const char* name) {
    if (!grad_enabled()) return;
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (!needs) return;
    auto node = std::make_shared<detail::Node>();
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    node->backward = std::move(backward);
    node->name = name;
    out.impl()->producer = std::move(node);
    out.impl()->requires_grad = true;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw RankError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));

    // Iterative post-order DFS producing a topological order of impls.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    struct Frame {
        detail::TensorImpl* impl;
        std::size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl().get(), 0});
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& node = f.impl->producer;
        if (node && f.next_child < node->inputs.size()) {
            detail::TensorImpl* child = node->inputs[f.next_child++].get();
            if (visited.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(f.impl);
            stack.pop_back();
        }
    }

    loss.impl()->grad_data()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* impl = *it;
        if (impl->producer && !impl->grad.empty()) impl->producer->backward(*impl);
    }
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const auto& x = a.data();
    const auto& y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    attach_node(
        result, {a, b},
        [a, b](detail::TensorImpl& o) {
            if (a.requires_grad()) {
                double* g = a.impl()->grad_data();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
            }
            if (b.requires_grad()) {
                double* g = b.impl()->grad_data();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
            }
        },
        "add");
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const auto& x = a.data();
    const auto& y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    attach_node(
        result, {a, b},
        [a, b](detail::TensorImpl& o) {
            if (a.requires_grad()) {
                double* g = a.impl()->grad_data();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
            }
            if (b.requires_grad()) {
                double* g = b.impl()->grad_data();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
            }
        },
        "sub");
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const auto& x = a.data();
    const auto& y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    attach_node(
        result, {a, b},
        [a, b](detail::TensorImpl& o) {
            const auto& x = a.impl()->data;
            const auto& y = b.impl()->data;
            if (a.requires_grad()) {
                double* g = a.impl()->grad_data();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
            }
            if (b.requires_grad()) {
                double* g = b.impl()->grad_data();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
            }
        },
        "mul");
    return result;
}

Tensor neg(const Tensor& a) {
    return unary_op(a, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(a, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(a, "mul_scalar", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor log(const Tensor& a) {
    return unary_op(a, "log", [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
    return unary_op(a, "abs", [](double v) { return std::abs(v); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(a, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    auto sig = [](double v) {
        if (v >= 0.0) {
            const double e = std::exp(-v);
            return 1.0 / (1.0 + e);
        }
        const double e = std::exp(v);
        return e / (1.0 + e);
    };
    return unary_op(a, "sigmoid", sig, [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    Tensor result = Tensor::scalar(total);
    attach_node(
        result, {a},
        [a](detail::TensorImpl& o) {
            double* g = a.impl()->grad_data();
            const double go = o.grad[0];
            for (std::size_t i = 0; i < a.impl()->data.size(); ++i) g[i] += go;
        },
        "sum");
    return result;
}

Tensor mean(const Tensor& a) {
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    double total = 0.0;
    for (double v : a.data()) total += v;
    Tensor result = Tensor::scalar(total * inv_n);
    attach_node(
        result, {a},
        [a, inv_n](detail::TensorImpl& o) {
            double* g = a.impl()->grad_data();
            const double go = o.grad[0] * inv_n;
            for (std::size_t i = 0; i < a.impl()->data.size(); ++i) g[i] += go;
        },
        "mean");
    return result;
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw DimensionError("reshape: element count mismatch " + shape_str(a.shape()) +
                             " -> " + shape_str(new_shape));
    Tensor result = make_tensor(std::move(new_shape), std::vector<double>(a.data().begin(), a.data().end()));
    attach_node(
        result, {a},
        [a](detail::TensorImpl& o) {
            double* g = a.impl()->grad_data();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        },
        "reshape");
    return result;
}

namespace {

// Row-major slice geometry along one axis: outer blocks x axis extent x inner stride.
struct SliceGeom {
    std::int64_t outer, axis_len, inner;
};

SliceGeom slice_geom(const Shape& shape, int axis) {
    SliceGeom g{1, shape[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) g.outer *= shape[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) g.inner *= shape[i];
    return g;
}

} // namespace

Tensor narrow(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
    if (axis < 0 || axis >= a.rank()) throw IndexError("narrow: axis out of range");
    const std::int64_t extent = a.dim(axis);
    if (start < 0 || len <= 0 || start + len > extent) throw IndexError("narrow: slice out of range");

    const auto g = slice_geom(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::vector<double> out(static_cast<std::size_t>(g.outer * len * g.inner));
    const auto& x = a.data();
    for (std::int64_t o = 0; o < g.outer; ++o) {
        const double* src = x.data() + (o * g.axis_len + start) * g.inner;
        double* dst = out.data() + o * len * g.inner;
        std::copy(src, src + len * g.inner, dst);
    }
    Tensor result = make_tensor(std::move(out_shape), std::move(out));
    attach_node(
        result, {a},
        [a, g, start, len](detail::TensorImpl& o) {
            double* ga = a.impl()->grad_data();
            for (std::int64_t outer = 0; outer < g.outer; ++outer) {
                const double* src = o.grad.data() + outer * len * g.inner;
                double* dst = ga + (outer * g.axis_len + start) * g.inner;
                for (std::int64_t i = 0; i < len * g.inner; ++i) dst[i] += src[i];
            }
        },
        "narrow");
    return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& base = parts[0].shape();
    if (axis < 0 || axis >= parts[0].rank()) throw IndexError("concat: axis out of range");
    std::int64_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        s[static_cast<std::size_t>(axis)] = base[static_cast<std::size_t>(axis)];
        if (s != base) throw DimensionError("concat: incompatible shapes");
        total += p.dim(axis);
    }

    Shape out_shape = base;
    out_shape[static_cast<std::size_t>(axis)] = total;
    const auto go = slice_geom(out_shape, axis);
    std::vector<double> out(static_cast<std::size_t>(go.outer * go.axis_len * go.inner));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.dim(axis);
        const auto& x = p.data();
        for (std::int64_t o = 0; o < go.outer; ++o) {
            const double* src = x.data() + o * len * go.inner;
            double* dst = out.data() + (o * go.axis_len + offset) * go.inner;
            std::copy(src, src + len * go.inner, dst);
        }
        offset += len;
    }

    Tensor result = make_tensor(std::move(out_shape), std::move(out));
    attach_node(
        result, parts,
        [parts, go](detail::TensorImpl& o) {
            std::int64_t offset = 0;
            for (const auto& p : parts) {
                const std::int64_t len = p.numel() / (go.outer * go.inner);
                if (p.requires_grad()) {
                    double* gp = p.impl()->grad_data();
                    for (std::int64_t outer = 0; outer < go.outer; ++outer) {
                        const double* src = o.grad.data() + (outer * go.axis_len + offset) * go.inner;
                        double* dst = gp + outer * len * go.inner;
                        for (std::int64_t i = 0; i < len * go.inner; ++i) dst[i] += src[i];
                    }
                }
                offset += len;
            }
        },
        "concat");
    return result;
}

} // namespace semd
