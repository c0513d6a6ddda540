#pragma once

// Dense f64 tensors with define-by-run reverse-mode autodiff. The graph is
// rebuilt on every forward pass; backward() walks it once in reverse
// topological order and accumulates gradients additively.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "svgen/rng.hpp"

namespace svgen {

using Shape = std::vector<int64_t>;

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible shapes passed to an op.
class ShapeError : public TensorError {
public:
    using TensorError::TensorError;
};

// NaN/Inf produced by an op, or any other numeric breakdown.
class NumericError : public TensorError {
public:
    using TensorError::TensorError;
};

// Misuse that is neither a shape nor a numeric problem (bad index, empty
// input, missing gradient, ...).
class ValueError : public TensorError {
public:
    using TensorError::TensorError;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized iff requires_grad
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // accumulates into parents' grad

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return leaf(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        return leaf(std::move(shape), v, requires_grad);
    }

    static Tensor scalar(double v) {
        return from_values({}, {v});
    }

    static Tensor from_values(Shape shape, std::vector<double> vals, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(vals.size())) {
            throw ShapeError("from_values: shape " + shape_str(shape) + " does not match " +
                             std::to_string(vals.size()) + " values");
        }
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(vals);
        t.node_->requires_grad = requires_grad;
        if (requires_grad) t.node_->ensure_grad();
        t.check_finite("leaf");
        return t;
    }

    static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0, bool requires_grad = false) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (double& x : v) x = rng.normal() * stddev;
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor rand_uniform(Shape shape, RngStream& rng, double lo, double hi,
                               bool requires_grad = false) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (double& x : v) x = rng.uniform(lo, hi);
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }

    const std::vector<double>& values() const { return node_->values; }

    // In-place mutation; for parameter init/loading, never mid-graph.
    std::vector<double>& values_mut() { return node_->values; }

    double item() const {
        if (numel() != 1) {
            throw ValueError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
        }
        return node_->values[0];
    }

    double at(std::initializer_list<int64_t> idx) const {
        return node_->values[static_cast<size_t>(offset_of(idx))];
    }

    bool requires_grad() const { return node_->requires_grad; }

    void set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        if (rg) node_->ensure_grad();
    }

    const std::vector<double>& grad() const {
        if (!node_->requires_grad) {
            throw ValueError("grad: tensor does not require grad");
        }
        const_cast<TensorNode*>(node_.get())->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        if (node_->requires_grad) node_->grad.assign(node_->values.size(), 0.0);
    }

    // Copy of the values with no graph history.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->shape = node_->shape;
        t.node_->values = node_->values;
        t.node_->op = "detach";
        return t;
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static Tensor leaf(Shape shape, double fill, bool requires_grad) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->values.assign(static_cast<size_t>(shape_numel(shape)), fill);
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        if (requires_grad) t.node_->ensure_grad();
        return t;
    }

    int64_t offset_of(std::initializer_list<int64_t> idx) const {
        const Shape& s = node_->shape;
        if (idx.size() != s.size()) {
            throw ValueError("at: index rank " + std::to_string(idx.size()) +
                             " does not match tensor rank " + std::to_string(s.size()));
        }
        int64_t off = 0;
        size_t d = 0;
        for (int64_t i : idx) {
            if (i < 0 || i >= s[d]) {
                throw ValueError("at: index " + std::to_string(i) + " out of range for dim " +
                                 std::to_string(d) + " of " + shape_str(s));
            }
            off = off * s[d] + i;
            ++d;
        }
        return off;
    }

    void check_finite(const char* op) const {
        for (double v : node_->values) {
            if (!std::isfinite(v)) {
                throw NumericError(std::string(op) + ": non-finite value produced, shape " +
                                   shape_str(node_->shape));
            }
        }
    }

    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op(const char* op, Shape shape, std::vector<double> vals,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backprop);
};

// Central node factory: finite-checks the result and records graph edges only
// when some input requires grad.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> vals,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backprop) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(vals);
    t.node_->op = op;
    t.check_finite(op);
    bool rg = false;
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
    if (rg) {
        t.node_->requires_grad = true;
        t.node_->ensure_grad();
        t.node_->parents.reserve(parents.size());
        for (const Tensor& p : parents) t.node_->parents.push_back(p.node());
        t.node_->backprop = std::move(backprop);
    }
    return t;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ValueError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;  // nothing reachable requires grad

    // Iterative post-order DFS over grad-requiring ancestors.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            TensorNode* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

struct BroadcastPlan {
    Shape out_shape;
    std::vector<int64_t> a_stride;  // per out dim; 0 where broadcast
    std::vector<int64_t> b_stride;
    bool same_shape = false;
};

inline BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out_shape = a;
        plan.same_shape = true;
        return plan;
    }
    size_t nd = std::max(a.size(), b.size());
    plan.out_shape.resize(nd);
    plan.a_stride.resize(nd);
    plan.b_stride.resize(nd);
    // Right-aligned dims; extent 1 broadcasts.
    std::vector<int64_t> as(nd, 1), bs(nd, 1);
    std::copy(a.begin(), a.end(), as.begin() + static_cast<int64_t>(nd - a.size()));
    std::copy(b.begin(), b.end(), bs.begin() + static_cast<int64_t>(nd - b.size()));
    for (size_t d = 0; d < nd; ++d) {
        if (as[d] != bs[d] && as[d] != 1 && bs[d] != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                             " are not broadcast-compatible");
        }
        plan.out_shape[d] = std::max(as[d], bs[d]);
    }
    int64_t astride = 1, bstride = 1;
    for (size_t d = nd; d-- > 0;) {
        plan.a_stride[d] = (as[d] == 1 && plan.out_shape[d] != 1) ? 0 : astride;
        plan.b_stride[d] = (bs[d] == 1 && plan.out_shape[d] != 1) ? 0 : bstride;
        astride *= as[d];
        bstride *= bs[d];
    }
    return plan;
}

// Walks every output index of `plan`, handing (out_lin, a_off, b_off) to fn.
template <typename Fn>
inline void broadcast_walk(const BroadcastPlan& plan, Fn&& fn) {
    size_t nd = plan.out_shape.size();
    int64_t total = shape_numel(plan.out_shape);
    std::vector<int64_t> idx(nd, 0);
    int64_t a_off = 0, b_off = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
        fn(lin, a_off, b_off);
        for (size_t d = nd; d-- > 0;) {
            ++idx[d];
            a_off += plan.a_stride[d];
            b_off += plan.b_stride[d];
            if (idx[d] < plan.out_shape[d]) break;
            a_off -= plan.a_stride[d] * plan.out_shape[d];
            b_off -= plan.b_stride[d] * plan.out_shape[d];
            idx[d] = 0;
        }
    }
}

namespace detail {

// Generic broadcasting binary op. DfA/DfB map (a, b, gout) -> grad contribution.
template <typename F, typename DfA, typename DfB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, DfA dfa, DfB dfb) {
    BroadcastPlan plan = broadcast_plan(op, a.shape(), b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<size_t>(shape_numel(plan.out_shape)));
    if (plan.same_shape) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    } else {
        broadcast_walk(plan, [&](int64_t lin, int64_t ao, int64_t bo) {
            out[static_cast<size_t>(lin)] = f(av[static_cast<size_t>(ao)], bv[static_cast<size_t>(bo)]);
        });
    }
    // Differentiability is captured at construction time so that toggling a
    // leaf's requires_grad later (parameter freezing) cannot reroute
    // gradients through an already-built graph.
    bool a_rg = a.requires_grad(), b_rg = b.requires_grad();
    return make_op(op, plan.out_shape, std::move(out), {a, b},
                   [plan, f, dfa, dfb, a_rg, b_rg](TensorNode& n) {
                       TensorNode* pa = n.parents[0].get();
                       TensorNode* pb = n.parents[1].get();
                       if (a_rg) pa->ensure_grad();
                       if (b_rg) pb->ensure_grad();
                       if (plan.same_shape) {
                           for (size_t i = 0; i < n.values.size(); ++i) {
                               double g = n.grad[i];
                               if (a_rg) pa->grad[i] += dfa(pa->values[i], pb->values[i], g);
                               if (b_rg) pb->grad[i] += dfb(pa->values[i], pb->values[i], g);
                           }
                       } else {
                           broadcast_walk(plan, [&](int64_t lin, int64_t ao, int64_t bo) {
                               double g = n.grad[static_cast<size_t>(lin)];
                               double x = pa->values[static_cast<size_t>(ao)];
                               double y = pb->values[static_cast<size_t>(bo)];
                               if (a_rg) pa->grad[static_cast<size_t>(ao)] += dfa(x, y, g);
                               if (b_rg) pb->grad[static_cast<size_t>(bo)] += dfb(x, y, g);
                           });
                       }
                   });
}

template <typename F, typename Df>
Tensor unary_op(const char* op, const Tensor& a, F f, Df df) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    return make_op(op, a.shape(), std::move(out), {a}, [f, df](TensorNode& n) {
        TensorNode* p = n.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < n.values.size(); ++i) {
            p->grad[i] += df(p->values[i], n.values[i], n.grad[i]);
        }
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

inline Tensor add(const Tensor& a, double c) {
    return detail::unary_op(
        "add_scalar", a, [c](double x) { return x + c; },
        [](double, double, double g) { return g; });
}

inline Tensor mul(const Tensor& a, double c) {
    return detail::unary_op(
        "mul_scalar", a, [c](double x) { return x * c; },
        [c](double, double, double g) { return g * c; });
}

inline Tensor neg(const Tensor& a) { return mul(a, -1.0); }

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y, double g) { return g * y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_op(
        "log", a, [](double x) { return std::log(x); },
        [](double x, double, double g) { return g / x; });
}

inline Tensor sqrt(const Tensor& a) {
    return detail::unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y, double g) { return g * 0.5 / y; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
    return detail::unary_op(
        "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double, double g) { return x > 0.0 ? g : slope * g; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}

// Numerically stable log(1 + e^x); gradient is sigmoid(x).
inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        "softplus", a,
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double, double g) { return g / (1.0 + std::exp(-x)); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel()) {
        throw ShapeError("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                         shape_str(new_shape));
    }
    return make_op("reshape", std::move(new_shape), a.values(), {a}, [](TensorNode& n) {
        TensorNode* p = n.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < n.values.size(); ++i) p->grad[i] += n.grad[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError("transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
    }
    int64_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(static_cast<size_t>(r * c));
    const auto& av = a.values();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = av[static_cast<size_t>(i * c + j)];
    return make_op("transpose", {c, r}, std::move(out), {a}, [r, c](TensorNode& n) {
        TensorNode* p = n.parents[0].get();
        p->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
                p->grad[static_cast<size_t>(i * c + j)] += n.grad[static_cast<size_t>(j * r + i)];
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) throw ValueError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s0));
    }
    Shape out_shape = s0;
    int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) {
            throw ShapeError("concat: rank mismatch between " + shape_str(s0) + " and " + shape_str(s));
        }
        for (size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != s0[d]) {
                throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) +
                                 " differ outside axis " + std::to_string(axis));
            }
        }
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<int64_t> part_axis(parts.size());
    int64_t off_axis = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& pv = parts[pi].values();
        int64_t pa = parts[pi].shape()[axis];
        part_axis[pi] = pa;
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(pv.begin() + o * pa * inner, pv.begin() + (o + 1) * pa * inner,
                      out.begin() + (o * axis_total + off_axis) * inner);
        }
        off_axis += pa;
    }
    std::vector<uint8_t> part_rg(parts.size());
    for (size_t pi = 0; pi < parts.size(); ++pi) part_rg[pi] = parts[pi].requires_grad() ? 1 : 0;
    return make_op("concat", std::move(out_shape), std::move(out), parts,
                   [outer, inner, axis_total, part_axis, part_rg](TensorNode& n) {
                       int64_t off = 0;
                       for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                           TensorNode* p = n.parents[pi].get();
                           int64_t pa = part_axis[pi];
                           if (part_rg[pi]) {
                               p->ensure_grad();
                               for (int64_t o = 0; o < outer; ++o) {
                                   const double* g = n.grad.data() + (o * axis_total + off) * inner;
                                   double* dst = p->grad.data() + o * pa * inner;
                                   for (int64_t i = 0; i < pa * inner; ++i) dst[i] += g[i];
                               }
                           }
                           off += pa;
                       }
                   });
}

inline Tensor slice(const Tensor& a, size_t axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    if (axis >= s.size()) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    if (start < 0 || len < 0 || start + len > s[axis]) {
        throw ValueError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for axis extent " +
                         std::to_string(s[axis]));
    }
    Shape out_shape = s;
    out_shape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= s[d];
    for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    int64_t ax = s[axis];

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const auto& av = a.values();
    for (int64_t o = 0; o < outer; ++o) {
        std::copy(av.begin() + (o * ax + start) * inner, av.begin() + (o * ax + start + len) * inner,
                  out.begin() + o * len * inner);
    }
    return make_op("slice", std::move(out_shape), std::move(out), {a},
                   [outer, inner, ax, start, len](TensorNode& n) {
                       TensorNode* p = n.parents[0].get();
                       p->ensure_grad();
                       for (int64_t o = 0; o < outer; ++o) {
                           const double* g = n.grad.data() + o * len * inner;
                           double* dst = p->grad.data() + (o * ax + start) * inner;
                           for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                       }
                   });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op("sum", {}, {s}, {a}, [](TensorNode& n) {
        TensorNode* p = n.parents[0].get();
        p->ensure_grad();
        double g = n.grad[0];
        for (double& d : p->grad) d += g;
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ValueError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    double inv = 1.0 / static_cast<double>(a.numel());
    return make_op("mean", {}, {s * inv}, {a}, [inv](TensorNode& n) {
        TensorNode* p = n.parents[0].get();
        p->ensure_grad();
        double g = n.grad[0] * inv;
        for (double& d : p->grad) d += g;
    });
}

namespace detail {
inline void reduce_extents(const char* op, const Shape& s, size_t axis, int64_t& outer,
                           int64_t& ax, int64_t& inner) {
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
    }
    outer = 1;
    inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= s[d];
    for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    ax = s[axis];
}
}  // namespace detail

inline Tensor sum_axis(const Tensor& a, size_t axis, bool keepdim = true) {
    int64_t outer, ax, inner;
    detail::reduce_extents("sum_axis", a.shape(), axis, outer, ax, inner);
    Shape out_shape = a.shape();
    if (keepdim) {
        out_shape[axis] = 1;
    } else {
        out_shape.erase(out_shape.begin() + static_cast<int64_t>(axis));
    }
    std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
    const auto& av = a.values();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < ax; ++k)
            for (int64_t i = 0; i < inner; ++i)
                out[static_cast<size_t>(o * inner + i)] += av[static_cast<size_t>((o * ax + k) * inner + i)];
    return make_op("sum_axis", std::move(out_shape), std::move(out), {a},
                   [outer, ax, inner](TensorNode& n) {
                       TensorNode* p = n.parents[0].get();
                       p->ensure_grad();
                       for (int64_t o = 0; o < outer; ++o)
                           for (int64_t k = 0; k < ax; ++k)
                               for (int64_t i = 0; i < inner; ++i)
                                   p->grad[static_cast<size_t>((o * ax + k) * inner + i)] +=
                                       n.grad[static_cast<size_t>(o * inner + i)];
                   });
}

inline Tensor mean_axis(const Tensor& a, size_t axis, bool keepdim = true) {
    int64_t ax = a.shape()[axis];
    return mul(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(ax));
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

namespace detail {
// Per-slice max along `axis`, detached (used only for numerical shifting; the
// shift cancels in softmax so no gradient flows through it).
inline Tensor detached_max_axis(const Tensor& a, size_t axis) {
    int64_t outer, ax, inner;
    reduce_extents("max_axis", a.shape(), axis, outer, ax, inner);
    Shape out_shape = a.shape();
    out_shape[axis] = 1;
    std::vector<double> out(static_cast<size_t>(outer * inner), -1e308);
    const auto& av = a.values();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < ax; ++k)
            for (int64_t i = 0; i < inner; ++i) {
                double v = av[static_cast<size_t>((o * ax + k) * inner + i)];
                double& m = out[static_cast<size_t>(o * inner + i)];
                if (v > m) m = v;
            }
    return Tensor::from_values(std::move(out_shape), std::move(out));
}
}  // namespace detail

inline Tensor softmax_axis(const Tensor& a, size_t axis) {
    Tensor shifted = sub(a, detail::detached_max_axis(a, axis));
    Tensor e = exp(shifted);
    return div(e, sum_axis(e, axis, true));
}

inline Tensor log_softmax_axis(const Tensor& a, size_t axis) {
    Tensor shifted = sub(a, detail::detached_max_axis(a, axis));
    return sub(shifted, log(sum_axis(exp(shifted), axis, true)));
}

// out[i] = mat[i, cols[i]]
inline Tensor pick_per_row(const Tensor& mat, std::span<const int64_t> cols) {
    if (mat.rank() != 2) {
        throw ShapeError("pick_per_row: expected rank-2 tensor, got " + shape_str(mat.shape()));
    }
    int64_t n = mat.dim(0), v = mat.dim(1);
    if (static_cast<int64_t>(cols.size()) != n) {
        throw ShapeError("pick_per_row: " + std::to_string(cols.size()) + " indices for " +
                         std::to_string(n) + " rows");
    }
    std::vector<double> out(static_cast<size_t>(n));
    std::vector<int64_t> c(cols.begin(), cols.end());
    const auto& mv = mat.values();
    for (int64_t i = 0; i < n; ++i) {
        if (c[i] < 0 || c[i] >= v) {
            throw ValueError("pick_per_row: index " + std::to_string(c[i]) +
                             " out of range [0, " + std::to_string(v) + ")");
        }
        out[static_cast<size_t>(i)] = mv[static_cast<size_t>(i * v + c[i])];
    }
    return make_op("pick_per_row", {n}, std::move(out), {mat}, [c, v](TensorNode& nd) {
        TensorNode* p = nd.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < c.size(); ++i) {
            p->grad[i * static_cast<size_t>(v) + static_cast<size_t>(c[i])] += nd.grad[i];
        }
    });
}

// Per-row cross entropy of logits (n, V) against integer targets; returns (n,).
inline Tensor cross_entropy(const Tensor& logits, std::span<const int64_t> targets) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy: expected rank-2 logits, got " + shape_str(logits.shape()));
    }
    return neg(pick_per_row(log_softmax_axis(logits, 1), targets));
}

// ---------------------------------------------------------------------------
// matmul / conv / upsample / embedding
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expected rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            double x = av[static_cast<size_t>(i * k + p)];
            if (x == 0.0) continue;
            const double* brow = bv.data() + p * n;
            double* orow = out.data() + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    bool a_rg = a.requires_grad(), b_rg = b.requires_grad();
    return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n, a_rg, b_rg](TensorNode& nd) {
        TensorNode* pa = nd.parents[0].get();
        TensorNode* pb = nd.parents[1].get();
        if (a_rg) {
            pa->ensure_grad();
            // dA = G * B^T
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    double g = nd.grad[static_cast<size_t>(i * n + j)];
                    if (g == 0.0) continue;
                    const double* brow = pb->values.data() + j;
                    double* arow = pa->grad.data() + i * k;
                    for (int64_t p = 0; p < k; ++p) arow[p] += g * brow[p * n];
                }
        }
        if (b_rg) {
            pb->ensure_grad();
            // dB = A^T * G
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double x = pa->values[static_cast<size_t>(i * k + p)];
                    if (x == 0.0) continue;
                    const double* grow = nd.grad.data() + i * n;
                    double* brow = pb->grad.data() + p * n;
                    for (int64_t j = 0; j < n; ++j) brow[j] += x * grow[j];
                }
        }
    });
}

// x: (N, Ci, H, W), w: (Co, Ci, kh, kw), bias: (Co) or undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
                     int64_t pad) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw ShapeError("conv2d: expected rank-4 input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Co = w.dim(0), Ciw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (Ci != Ciw) {
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    }
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) {
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()) + " with pad " + std::to_string(pad));
    }
    bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != Co)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(Co) + " output channels");
    }

    std::vector<double> out(static_cast<size_t>(N * Co * Ho * Wo), 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Co; ++co) {
            double b = has_bias ? bias.values()[static_cast<size_t>(co)] : 0.0;
            for (int64_t oh = 0; oh < Ho; ++oh) {
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = b;
                    for (int64_t ci = 0; ci < Ci; ++ci) {
                        const double* xp = xv.data() + ((n * Ci + ci) * H) * W;
                        const double* wp = wv.data() + ((co * Ci + ci) * kh) * kw;
                        for (int64_t u = 0; u < kh; ++u) {
                            int64_t ih = oh * stride - pad + u;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t v = 0; v < kw; ++v) {
                                int64_t iw = ow * stride - pad + v;
                                if (iw < 0 || iw >= W) continue;
                                acc += xp[ih * W + iw] * wp[u * kw + v];
                            }
                        }
                    }
                    out[static_cast<size_t>(((n * Co + co) * Ho + oh) * Wo + ow)] = acc;
                }
            }
        }
    }

    std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{x, w, bias}
                                           : std::vector<Tensor>{x, w};
    bool x_rg = x.requires_grad(), w_rg = w.requires_grad();
    bool b_rg = has_bias && bias.requires_grad();
    return make_op("conv2d", {N, Co, Ho, Wo}, std::move(out), std::move(parents),
                   [N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, has_bias, x_rg, w_rg,
                    b_rg](TensorNode& nd) {
                       TensorNode* px = nd.parents[0].get();
                       TensorNode* pw = nd.parents[1].get();
                       TensorNode* pb = has_bias ? nd.parents[2].get() : nullptr;
                       if (x_rg) px->ensure_grad();
                       if (w_rg) pw->ensure_grad();
                       if (b_rg) pb->ensure_grad();
                       for (int64_t n = 0; n < N; ++n) {
                           for (int64_t co = 0; co < Co; ++co) {
                               for (int64_t oh = 0; oh < Ho; ++oh) {
                                   for (int64_t ow = 0; ow < Wo; ++ow) {
                                       double g = nd.grad[static_cast<size_t>(
                                           ((n * Co + co) * Ho + oh) * Wo + ow)];
                                       if (g == 0.0) continue;
                                       if (b_rg) pb->grad[static_cast<size_t>(co)] += g;
                                       for (int64_t ci = 0; ci < Ci; ++ci) {
                                           const double* xp = px->values.data() + ((n * Ci + ci) * H) * W;
                                           const double* wp = pw->values.data() + ((co * Ci + ci) * kh) * kw;
                                           double* gxp = x_rg
                                                             ? px->grad.data() + ((n * Ci + ci) * H) * W
                                                             : nullptr;
                                           double* gwp = w_rg
                                                             ? pw->grad.data() + ((co * Ci + ci) * kh) * kw
                                                             : nullptr;
                                           for (int64_t u = 0; u < kh; ++u) {
                                               int64_t ih = oh * stride - pad + u;
                                               if (ih < 0 || ih >= H) continue;
                                               for (int64_t v = 0; v < kw; ++v) {
                                                   int64_t iw = ow * stride - pad + v;
                                                   if (iw < 0 || iw >= W) continue;
                                                   if (gxp) gxp[ih * W + iw] += g * wp[u * kw + v];
                                                   if (gwp) gwp[u * kw + v] += g * xp[ih * W + iw];
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       }
                   });
}

inline Tensor upsample_nearest2(const Tensor& x, int64_t factor = 2) {
    if (x.rank() != 4) {
        throw ShapeError("upsample_nearest: expected rank-4 input, got " + shape_str(x.shape()));
    }
    if (factor < 1) throw ValueError("upsample_nearest: factor must be >= 1");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Ho = H * factor, Wo = W * factor;
    std::vector<double> out(static_cast<size_t>(N * C * Ho * Wo));
    const auto& xv = x.values();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = xv.data() + nc * H * W;
        double* dst = out.data() + nc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) dst[oh * Wo + ow] = src[(oh / factor) * W + ow / factor];
    }
    return make_op("upsample_nearest", {N, C, Ho, Wo}, std::move(out), {x},
                   [N, C, H, W, Ho, Wo, factor](TensorNode& nd) {
                       TensorNode* p = nd.parents[0].get();
                       p->ensure_grad();
                       for (int64_t nc = 0; nc < N * C; ++nc) {
                           const double* g = nd.grad.data() + nc * Ho * Wo;
                           double* dst = p->grad.data() + nc * H * W;
                           for (int64_t oh = 0; oh < Ho; ++oh)
                               for (int64_t ow = 0; ow < Wo; ++ow)
                                   dst[(oh / factor) * W + ow / factor] += g[oh * Wo + ow];
                       }
                   });
}

// table: (N, d), ids: (M) -> (M, d). Gradients scatter-add into table rows.
inline Tensor embedding_lookup(const Tensor& table, std::span<const int64_t> ids) {
    if (table.rank() != 2) {
        throw ShapeError("embedding_lookup: expected rank-2 table, got " + shape_str(table.shape()));
    }
    int64_t N = table.dim(0), d = table.dim(1);
    int64_t M = static_cast<int64_t>(ids.size());
    std::vector<int64_t> idv(ids.begin(), ids.end());
    std::vector<double> out(static_cast<size_t>(M * d));
    const auto& tv = table.values();
    for (int64_t i = 0; i < M; ++i) {
        if (idv[static_cast<size_t>(i)] < 0 || idv[static_cast<size_t>(i)] >= N) {
            throw ValueError("embedding_lookup: id " + std::to_string(idv[static_cast<size_t>(i)]) +
                             " out of range [0, " + std::to_string(N) + ")");
        }
        std::copy(tv.begin() + idv[static_cast<size_t>(i)] * d,
                  tv.begin() + (idv[static_cast<size_t>(i)] + 1) * d, out.begin() + i * d);
    }
    return make_op("embedding_lookup", {M, d}, std::move(out), {table}, [idv, d](TensorNode& nd) {
        TensorNode* p = nd.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < idv.size(); ++i) {
            const double* g = nd.grad.data() + static_cast<int64_t>(i) * d;
            double* dst = p->grad.data() + idv[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

inline Tensor gather_rows(const Tensor& mat, std::span<const int64_t> rows) {
    return embedding_lookup(mat, rows);
}

// Values are replaced by `replacement` bit-for-bit; gradient passes to z
// unchanged (straight-through estimator).
inline Tensor straight_through(const Tensor& z, std::vector<double> replacement) {
    if (static_cast<int64_t>(replacement.size()) != z.numel()) {
        throw ShapeError("straight_through: replacement size " + std::to_string(replacement.size()) +
                         " does not match " + shape_str(z.shape()));
    }
    return make_op("straight_through", z.shape(), std::move(replacement), {z}, [](TensorNode& nd) {
        TensorNode* p = nd.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i];
    });
}

// ---------------------------------------------------------------------------
// normalization composites
// ---------------------------------------------------------------------------

// x: (N, C, H, W); gain/bias: (C). Normalizes over each (group, H, W) slab.
inline Tensor group_norm(const Tensor& x, int64_t groups, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() != 4) {
        throw ShapeError("group_norm: expected rank-4 input, got " + shape_str(x.shape()));
    }
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups < 1 || C % groups != 0) {
        throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                         std::to_string(C) + " channels");
    }
    if (gain.numel() != C || bias.numel() != C) {
        throw ShapeError("group_norm: gain/bias must have " + std::to_string(C) + " elements");
    }
    Tensor g = reshape(x, {N * groups, (C / groups) * H * W});
    Tensor mu = mean_axis(g, 1, true);
    Tensor centered = sub(g, mu);
    Tensor var = mean_axis(mul(centered, centered), 1, true);
    Tensor normed = div(centered, sqrt(add(var, eps)));
    Tensor y = reshape(normed, {N, C, H, W});
    return add(mul(y, reshape(gain, {1, C, 1, 1})), reshape(bias, {1, C, 1, 1}));
}

// x: (n, d) rows; gain/bias: (d).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() != 2) {
        throw ShapeError("layer_norm: expected rank-2 input, got " + shape_str(x.shape()));
    }
    int64_t d = x.dim(1);
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " elements");
    }
    Tensor mu = mean_axis(x, 1, true);
    Tensor centered = sub(x, mu);
    Tensor var = mean_axis(mul(centered, centered), 1, true);
    Tensor normed = div(centered, sqrt(add(var, eps)));
    return add(mul(normed, reshape(gain, {1, d})), reshape(bias, {1, d}));
}

// Row-wise x / ||x||. eps only guards the zero vector; for any non-degenerate
// row the result has unit norm to ~1e-12.
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
    if (x.rank() != 2) {
        throw ShapeError("l2_normalize_rows: expected rank-2 input, got " + shape_str(x.shape()));
    }
    Tensor sq = sum_axis(mul(x, x), 1, true);
    return div(x, sqrt(add(sq, eps)));
}

}  // namespace svgen
