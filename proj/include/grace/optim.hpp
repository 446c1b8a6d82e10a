#pragma once

/**
 * In-place parameter updates. Plain gradient descent is the default
 * everywhere; Adam is available behind a config switch for experiments
 * where raw GD stalls.
 */

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace grace {

// param := param - lr * grad, for every parameter in the list.
inline void sgd_step(const std::vector<Var>& params, double lr) {
    for (const Var& p : params) {
        if (!p->requires_grad || p->grad.size() != p->data.size())
            throw StateError("sgd_step: parameter has no gradient buffer");
        for (std::size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
        detail::ensure_finite(*p, "sgd_step");
    }
}

enum class OptimizerKind { gd, adam };

inline OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "gd") return OptimizerKind::gd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer: " + name);
}

inline std::string optimizer_kind_name(OptimizerKind k) {
    return k == OptimizerKind::gd ? "gd" : "adam";
}

// Stateful update rule over a fixed parameter set. GD matches sgd_step
// exactly; Adam keeps per-parameter first/second moment buffers.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void step(const std::vector<Var>& params) {
        if (kind_ == OptimizerKind::gd) {
            sgd_step(params, lr_);
            return;
        }
        ++t_;
        for (const Var& p : params) {
            if (!p->requires_grad || p->grad.size() != p->data.size())
                throw StateError("Optimizer::step: parameter has no gradient buffer");
            auto& st = slots_[p.get()];
            if (st.m.empty()) {
                st.m.assign(p->data.size(), 0.0);
                st.v.assign(p->data.size(), 0.0);
            }
            const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
            for (std::size_t i = 0; i < p->data.size(); ++i) {
                const double g = p->grad[i];
                st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
                st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
                p->data[i] -= lr_ * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps_);
            }
            detail::ensure_finite(*p, "Optimizer::step");
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };

    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::size_t t_ = 0;
    std::unordered_map<const Tensor*, Slot> slots_;
};

}  // namespace grace
