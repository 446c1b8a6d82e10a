#pragma once

/**
 * Dense double-precision tensors with tape-based reverse-mode differentiation.
 *
 * The op set is the minimal surface needed to train a small ReLU classifier
 * and codebook values against a cross-entropy loss: matmul, add (including
 * bias broadcast), elementwise arithmetic, relu/sigmoid/softmax, slice/concat,
 * and numerically stable softmax cross-entropy. Everything is float64.
 *
 * Tensors are immutable once created except through explicit optimizer
 * updates. Every public op validates that its output is finite; NaN or Inf
 * raises NumericError instead of propagating silently. Ops only record tape
 * state when some input requires gradients, so pure inference carries no
 * autodiff overhead.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace grace {

class Tensor;
using Var = std::shared_ptr<Tensor>;

class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized like data when requires_grad

    // Tape links; empty unless this node participates in a gradient graph.
    std::vector<Var> parents;
    std::function<void()> backward_fn;

    static Var make(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        if (n != values.size()) throw DimensionError("Tensor::make: shape does not match data length");
        for (double v : values) {
            if (!std::isfinite(v)) throw NumericError("Tensor::make: non-finite value");
        }
        auto t = std::make_shared<Tensor>();
        t->shape = std::move(shape);
        t->data = std::move(values);
        t->requires_grad = requires_grad;
        if (requires_grad) t->grad.assign(t->data.size(), 0.0);
        return t;
    }

    static Var zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Var scalar(double v, bool requires_grad = false) { return make({1}, {v}, requires_grad); }

    static Var vector(std::vector<double> values, bool requires_grad = false) {
        std::vector<std::size_t> s{values.size()};
        return make(std::move(s), std::move(values), requires_grad);
    }

    static Var uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        std::vector<double> values(n);
        for (double& v : values) v = rng.uniform(lo, hi);
        return make(std::move(shape), std::move(values), requires_grad);
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    double at(std::size_t i) const { return data.at(i); }
    double at(std::size_t i, std::size_t j) const {
        if (rank() != 2) throw DimensionError("Tensor::at(i,j): not a matrix");
        if (i >= shape[0] || j >= shape[1]) throw RangeError("Tensor::at(i,j): out of range");
        return data[i * shape[1] + j];
    }

    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0);
    }

    // Detach from any tape; keeps data and grad requirement.
    Var detached() const { return make(shape, data, requires_grad); }
};

namespace detail {

inline thread_local bool grad_enabled = true;

inline void ensure_finite(const Tensor& t, const char* op) {
    for (double v : t.data) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced non-finite value");
    }
}

inline Var node(std::vector<std::size_t> shape, std::vector<double> values, std::vector<Var> parents, const char* op) {
    bool needs = false;
    if (detail::grad_enabled)
        for (const Var& p : parents) needs = needs || p->requires_grad;
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = needs;
    if (needs) {
        t->grad.assign(t->data.size(), 0.0);
        t->parents = std::move(parents);
    }
    ensure_finite(*t, op);
    return t;
}

}  // namespace detail

// Suppresses tape recording in scope; ops produce plain value tensors.
// Inference paths (predict, accuracy, benchmark loops) use this so they
// neither allocate gradient buffers nor keep graphs alive.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ---------------------------------------------------------------------------
// matmul

inline Var matmul(const Var& a, const Var& b) {
    if (a->rank() > 2 || b->rank() > 2 || a->rank() == 0 || b->rank() == 0)
        throw DimensionError("matmul: operands must be 1-D or 2-D");
    const std::size_t m = a->rank() == 2 ? a->shape[0] : 1;
    const std::size_t k = a->rank() == 2 ? a->shape[1] : a->shape[0];
    const std::size_t k2 = b->rank() == 2 ? b->shape[0] : b->shape[0];
    const std::size_t n = b->rank() == 2 ? b->shape[1] : 1;
    if (k != k2) throw DimensionError("matmul: inner dimensions disagree");

    std::vector<double> out(m * n, 0.0);
    const double* A = a->data.data();
    const double* B = b->data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += A[i * k + t] * B[t * n + j];
            out[i * n + j] = acc;
        }
    }

    std::vector<std::size_t> out_shape;
    if (a->rank() == 2 && b->rank() == 2) out_shape = {m, n};
    else if (a->rank() == 1 && b->rank() == 1) out_shape = {1};
    else if (a->rank() == 1) out_shape = {n};
    else out_shape = {m};

    Var c = detail::node(std::move(out_shape), std::move(out), {a, b}, "matmul");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var pa = a, pb = b;
        c->backward_fn = [self, pa, pb, m, k, n]() {
            const double* G = self->grad.data();
            if (pa->requires_grad) {
                double* dA = pa->grad.data();
                const double* B = pb->data.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        double acc = 0.0;
                        for (std::size_t t = 0; t < n; ++t) acc += G[i * n + t] * B[j * n + t];
                        dA[i * k + j] += acc;
                    }
            }
            if (pb->requires_grad) {
                double* dB = pb->grad.data();
                const double* A = pa->data.data();
                for (std::size_t j = 0; j < k; ++j)
                    for (std::size_t t = 0; t < n; ++t) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += A[i * k + j] * G[i * n + t];
                        dB[j * n + t] += acc;
                    }
            }
        };
    }
    return c;
}

inline Var transpose(const Var& x) {
    if (x->rank() != 2) throw DimensionError("transpose: operand must be 2-D");
    const std::size_t m = x->shape[0], n = x->shape[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x->data[i * n + j];
    Var c = detail::node({n, m}, std::move(out), {x}, "transpose");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px, m, n]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) px->grad[i * n + j] += self->grad[j * m + i];
        };
    }
    return c;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

inline Var add(const Var& a, const Var& b) {
    const bool bias_bcast = a->rank() == 2 && b->rank() == 1 && b->size() == a->shape[1];
    if (!bias_bcast && a->shape != b->shape)
        throw DimensionError("add: shapes disagree (only [m x n] + [n] broadcast is supported)");
    std::vector<double> out(a->size());
    if (bias_bcast) {
        const std::size_t rows = a->shape[0], cols = a->shape[1];
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a->data[i * cols + j] + b->data[j];
    } else {
        for (std::size_t i = 0; i < a->size(); ++i) out[i] = a->data[i] + b->data[i];
    }
    Var c = detail::node(a->shape, std::move(out), {a, b}, "add");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var pa = a, pb = b;
        c->backward_fn = [self, pa, pb, bias_bcast]() {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < pa->size(); ++i) pa->grad[i] += self->grad[i];
            if (pb->requires_grad) {
                if (bias_bcast) {
                    const std::size_t rows = pa->shape[0], cols = pa->shape[1];
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) pb->grad[j] += self->grad[i * cols + j];
                } else {
                    for (std::size_t i = 0; i < pb->size(); ++i) pb->grad[i] += self->grad[i];
                }
            }
        };
    }
    return c;
}

inline Var sub(const Var& a, const Var& b) {
    if (a->shape != b->shape) throw DimensionError("sub: shapes disagree");
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < a->size(); ++i) out[i] = a->data[i] - b->data[i];
    Var c = detail::node(a->shape, std::move(out), {a, b}, "sub");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var pa = a, pb = b;
        c->backward_fn = [self, pa, pb]() {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < pa->size(); ++i) pa->grad[i] += self->grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < pb->size(); ++i) pb->grad[i] -= self->grad[i];
        };
    }
    return c;
}

inline Var mul(const Var& a, const Var& b) {
    if (a->shape != b->shape) throw DimensionError("mul: shapes disagree");
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < a->size(); ++i) out[i] = a->data[i] * b->data[i];
    Var c = detail::node(a->shape, std::move(out), {a, b}, "mul");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var pa = a, pb = b;
        c->backward_fn = [self, pa, pb]() {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < pa->size(); ++i) pa->grad[i] += self->grad[i] * pb->data[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < pb->size(); ++i) pb->grad[i] += self->grad[i] * pa->data[i];
        };
    }
    return c;
}

// Scalar tensor [1] times arbitrary tensor.
inline Var smul(const Var& s, const Var& x) {
    if (s->size() != 1) throw DimensionError("smul: first operand must be a scalar tensor");
    const double sv = s->data[0];
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < x->size(); ++i) out[i] = sv * x->data[i];
    Var c = detail::node(x->shape, std::move(out), {s, x}, "smul");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var ps = s, px = x;
        c->backward_fn = [self, ps, px]() {
            if (ps->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < px->size(); ++i) acc += self->grad[i] * px->data[i];
                ps->grad[0] += acc;
            }
            if (px->requires_grad)
                for (std::size_t i = 0; i < px->size(); ++i) px->grad[i] += self->grad[i] * ps->data[0];
        };
    }
    return c;
}

inline Var scale(const Var& x, double factor) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < x->size(); ++i) out[i] = factor * x->data[i];
    Var c = detail::node(x->shape, std::move(out), {x}, "scale");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px, factor]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < px->size(); ++i) px->grad[i] += factor * self->grad[i];
        };
    }
    return c;
}

inline Var add_const(const Var& x, double value) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < x->size(); ++i) out[i] = x->data[i] + value;
    Var c = detail::node(x->shape, std::move(out), {x}, "add_const");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < px->size(); ++i) px->grad[i] += self->grad[i];
        };
    }
    return c;
}

// ---------------------------------------------------------------------------
// nonlinearities

inline Var relu(const Var& x) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < x->size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    Var c = detail::node(x->shape, std::move(out), {x}, "relu");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        // Subgradient at 0 is 0.
        c->backward_fn = [self, px]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < px->size(); ++i)
                if (px->data[i] > 0.0) px->grad[i] += self->grad[i];
        };
    }
    return c;
}

inline Var sigmoid(const Var& x) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double z = x->data[i];
        // Branch on sign so neither exp overflows; saturates cleanly to 0 or 1.
        out[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    Var c = detail::node(x->shape, std::move(out), {x}, "sigmoid");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < px->size(); ++i) {
                const double s = self->data[i];
                px->grad[i] += self->grad[i] * s * (1.0 - s);
            }
        };
    }
    return c;
}

inline Var softmax(const Var& x) {
    if (x->rank() != 1) throw DimensionError("softmax: operand must be 1-D");
    const std::size_t n = x->size();
    if (n == 0) throw DimensionError("softmax: empty operand");
    double mx = x->data[0];
    for (double v : x->data) mx = std::max(mx, v);
    std::vector<double> out(n);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(x->data[i] - mx);
        denom += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
    Var c = detail::node(x->shape, std::move(out), {x}, "softmax");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px]() {
            if (!px->requires_grad) return;
            double dot = 0.0;
            for (std::size_t i = 0; i < self->size(); ++i) dot += self->grad[i] * self->data[i];
            for (std::size_t i = 0; i < self->size(); ++i)
                px->grad[i] += self->data[i] * (self->grad[i] - dot);
        };
    }
    return c;
}

// ---------------------------------------------------------------------------
// reductions, views

inline Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v;
    Var c = detail::node({1}, {acc}, {x}, "sum");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < px->size(); ++i) px->grad[i] += self->grad[0];
        };
    }
    return c;
}

inline Var slice(const Var& x, std::size_t start, std::size_t len) {
    if (x->rank() != 1) throw DimensionError("slice: operand must be 1-D");
    if (start + len > x->size()) throw RangeError("slice: range exceeds tensor length");
    std::vector<double> out(x->data.begin() + static_cast<std::ptrdiff_t>(start),
                            x->data.begin() + static_cast<std::ptrdiff_t>(start + len));
    Var c = detail::node({len}, std::move(out), {x}, "slice");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var px = x;
        c->backward_fn = [self, px, start, len]() {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < len; ++i) px->grad[start + i] += self->grad[i];
        };
    }
    return c;
}

inline Var concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw ArgumentError("concat: no operands");
    std::vector<double> out;
    for (const Var& x : xs) {
        if (x->rank() != 1) throw DimensionError("concat: operands must be 1-D");
        out.insert(out.end(), x->data.begin(), x->data.end());
    }
    std::vector<std::size_t> shape{out.size()};
    Var c = detail::node(std::move(shape), std::move(out), xs, "concat");
    if (c->requires_grad) {
        Tensor* self = c.get();
        std::vector<Var> ps = xs;
        c->backward_fn = [self, ps]() {
            std::size_t off = 0;
            for (const Var& p : ps) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += self->grad[off + i];
                off += p->size();
            }
        };
    }
    return c;
}

// ---------------------------------------------------------------------------
// losses

// -log softmax(logits)[target], stable under large logits.
inline Var softmax_cross_entropy(const Var& logits, std::size_t target) {
    if (logits->rank() != 1) throw DimensionError("softmax_cross_entropy: logits must be 1-D");
    const std::size_t n = logits->size();
    if (target >= n) throw RangeError("softmax_cross_entropy: target class out of range");
    double mx = logits->data[0];
    for (double v : logits->data) mx = std::max(mx, v);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(logits->data[i] - mx);
    const double lse = mx + std::log(denom);
    Var c = detail::node({1}, {lse - logits->data[target]}, {logits}, "softmax_cross_entropy");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var pl = logits;
        c->backward_fn = [self, pl, target, mx, denom]() {
            if (!pl->requires_grad) return;
            const double g = self->grad[0];
            for (std::size_t i = 0; i < pl->size(); ++i) {
                const double p = std::exp(pl->data[i] - mx) / denom;
                pl->grad[i] += g * (p - (i == target ? 1.0 : 0.0));
            }
        };
    }
    return c;
}

// Mean cross-entropy over rows of [m x n] logits.
inline Var softmax_cross_entropy_batch(const Var& logits, const std::vector<std::size_t>& targets) {
    if (logits->rank() != 2) throw DimensionError("softmax_cross_entropy_batch: logits must be 2-D");
    const std::size_t m = logits->shape[0], n = logits->shape[1];
    if (targets.size() != m) throw DimensionError("softmax_cross_entropy_batch: one target per row required");
    std::vector<double> mx(m), denom(m, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (targets[i] >= n) throw RangeError("softmax_cross_entropy_batch: target class out of range");
        const double* row = logits->data.data() + i * n;
        double rmx = row[0];
        for (std::size_t j = 0; j < n; ++j) rmx = std::max(rmx, row[j]);
        double rd = 0.0;
        for (std::size_t j = 0; j < n; ++j) rd += std::exp(row[j] - rmx);
        mx[i] = rmx;
        denom[i] = rd;
        total += rmx + std::log(rd) - row[targets[i]];
    }
    Var c = detail::node({1}, {total / static_cast<double>(m)}, {logits}, "softmax_cross_entropy_batch");
    if (c->requires_grad) {
        Tensor* self = c.get();
        Var pl = logits;
        std::vector<std::size_t> tg = targets;
        c->backward_fn = [self, pl, tg, mx, denom, m, n]() {
            if (!pl->requires_grad) return;
            const double g = self->grad[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const double* row = pl->data.data() + i * n;
                double* grow = pl->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const double p = std::exp(row[j] - mx[i]) / denom[i];
                    grow[j] += g * (p - (j == tg[i] ? 1.0 : 0.0));
                }
            }
        };
    }
    return c;
}

// ---------------------------------------------------------------------------
// reverse pass

inline void backward(const Var& root) {
    if (root->size() != 1) throw StateError("backward: root must be a scalar");
    if (!root->requires_grad) throw StateError("backward: root does not require gradients");

    // Iterative post-order DFS builds the topological order once.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

inline std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ArgumentError("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;  // ties keep the lowest index
    return best;
}

}  // namespace grace
