#pragma once

/**
 * Randomized gradient checks: every differentiable op, plus the composite
 * losses the editors train (value decoding, elastic penalty, gate mixture,
 * slot memory), compared against central finite differences.
 *
 * Shared between the unit tests (few cases for speed) and the acceptance
 * suite (100 cases per op).
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <grace/codebook.hpp>
#include <grace/editors.hpp>
#include <grace/model.hpp>
#include <grace/rng.hpp>
#include <grace/tensor.hpp>

#include "oracles.hpp"

namespace grad_suite {

struct Case {
    // One (shape, data) per differentiated leaf.
    std::vector<std::pair<std::vector<std::size_t>, std::vector<double>>> leaves;
    // Rebuilds the scalar from leaf tensors; called for both the analytic
    // pass and every finite-difference probe.
    std::function<grace::Var(const std::vector<grace::Var>&)> scalar_of;
};

struct OpResult {
    std::string op;
    std::size_t cases = 0;
    double max_rel_err = 0.0;
};

// Draw that stays away from relu's kink so finite differences are valid.
inline double draw_off_kink(grace::Rng& rng) {
    double v = rng.uniform(-2.0, 2.0);
    if (v >= 0.0 && v < 0.05) v += 0.1;
    if (v < 0.0 && v > -0.05) v -= 0.1;
    return v;
}

inline std::vector<double> draw_vec(grace::Rng& rng, std::size_t n, bool off_kink = false) {
    std::vector<double> v(n);
    for (double& e : v) e = off_kink ? draw_off_kink(rng) : rng.uniform(-2.0, 2.0);
    return v;
}

template <typename MakeCase>
inline OpResult check_op(const std::string& name, std::size_t cases, grace::Rng& rng, MakeCase&& make_case) {
    OpResult result{name, cases, 0.0};
    for (std::size_t c = 0; c < cases; ++c) {
        Case cs = make_case(rng);

        std::vector<grace::Var> leaves;
        for (const auto& [shape, data] : cs.leaves) leaves.push_back(grace::Tensor::make(shape, data, true));
        grace::Var scalar = cs.scalar_of(leaves);
        grace::backward(scalar);

        std::vector<std::vector<double>> point;
        for (const auto& [shape, data] : cs.leaves) point.push_back(data);
        auto f = [&](const std::vector<std::vector<double>>& p) {
            std::vector<grace::Var> ls;
            for (std::size_t i = 0; i < p.size(); ++i)
                ls.push_back(grace::Tensor::make(cs.leaves[i].first, p[i]));
            return cs.scalar_of(ls)->data[0];
        };
        std::vector<std::vector<double>> fd = oracles::fd_gradient(f, point);

        for (std::size_t i = 0; i < leaves.size(); ++i)
            for (std::size_t k = 0; k < leaves[i]->size(); ++k)
                result.max_rel_err =
                    std::max(result.max_rel_err, oracles::rel_err(leaves[i]->grad[k], fd[i][k]));
    }
    return result;
}

// Projects a tensor to a scalar against fixed random coefficients so every
// output element carries a distinct gradient.
inline grace::Var project(const grace::Var& t, const std::vector<double>& coeffs) {
    return grace::sum(grace::mul(t, grace::Tensor::make(t->shape, coeffs)));
}

inline std::vector<OpResult> run_all(std::size_t cases_per_op, std::uint64_t seed) {
    using namespace grace;
    Rng rng(seed);
    std::vector<OpResult> out;

    out.push_back(check_op("matmul", cases_per_op, rng, [](Rng& r) {
        const std::size_t m = 2 + r.below(3), k = 2 + r.below(3), n = 2 + r.below(3);
        std::vector<double> proj = draw_vec(r, m * n);
        return Case{{{{m, k}, draw_vec(r, m * k)}, {{k, n}, draw_vec(r, k * n)}},
                    [proj](const std::vector<Var>& L) { return project(matmul(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("matmul_vec", cases_per_op, rng, [](Rng& r) {
        const std::size_t m = 2 + r.below(3), k = 2 + r.below(3);
        std::vector<double> proj = draw_vec(r, m);
        return Case{{{{m, k}, draw_vec(r, m * k)}, {{k}, draw_vec(r, k)}},
                    [proj](const std::vector<Var>& L) { return project(matmul(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("transpose", cases_per_op, rng, [](Rng& r) {
        const std::size_t m = 2 + r.below(3), n = 2 + r.below(3);
        std::vector<double> proj = draw_vec(r, m * n);
        return Case{{{{m, n}, draw_vec(r, m * n)}},
                    [proj](const std::vector<Var>& L) { return project(transpose(L[0]), proj); }};
    }));

    out.push_back(check_op("add", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}, {{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(add(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("add_bias_broadcast", cases_per_op, rng, [](Rng& r) {
        const std::size_t m = 2 + r.below(3), n = 2 + r.below(3);
        std::vector<double> proj = draw_vec(r, m * n);
        return Case{{{{m, n}, draw_vec(r, m * n)}, {{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(add(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("sub", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}, {{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(sub(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("mul", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}, {{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(mul(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("smul", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{1}, draw_vec(r, 1)}, {{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(smul(L[0], L[1]), proj); }};
    }));

    out.push_back(check_op("scale", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        const double factor = r.uniform(-3.0, 3.0);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}},
                    [proj, factor](const std::vector<Var>& L) { return project(scale(L[0], factor), proj); }};
    }));

    out.push_back(check_op("add_const", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        const double value = r.uniform(-3.0, 3.0);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}},
                    [proj, value](const std::vector<Var>& L) { return project(add_const(L[0], value), proj); }};
    }));

    out.push_back(check_op("relu", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n, true)}},
                    [proj](const std::vector<Var>& L) { return project(relu(L[0]), proj); }};
    }));

    out.push_back(check_op("sigmoid", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(sigmoid(L[0]), proj); }};
    }));

    out.push_back(check_op("softmax", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        std::vector<double> proj = draw_vec(r, n);
        return Case{{{{n}, draw_vec(r, n)}},
                    [proj](const std::vector<Var>& L) { return project(softmax(L[0]), proj); }};
    }));

    out.push_back(check_op("sum", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        return Case{{{{n}, draw_vec(r, n)}}, [](const std::vector<Var>& L) { return sum(L[0]); }};
    }));

    out.push_back(check_op("slice", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 4 + r.below(3);
        const std::size_t start = r.below(2), len = 2 + r.below(n - 2 - start);
        std::vector<double> proj = draw_vec(r, len);
        return Case{{{{n}, draw_vec(r, n)}}, [proj, start, len](const std::vector<Var>& L) {
                        return project(slice(L[0], start, len), proj);
                    }};
    }));

    out.push_back(check_op("concat", cases_per_op, rng, [](Rng& r) {
        const std::size_t a = 2 + r.below(3), b = 2 + r.below(3);
        std::vector<double> proj = draw_vec(r, a + b);
        return Case{{{{a}, draw_vec(r, a)}, {{b}, draw_vec(r, b)}},
                    [proj](const std::vector<Var>& L) { return project(concat({L[0], L[1]}), proj); }};
    }));

    out.push_back(check_op("softmax_cross_entropy", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        const std::size_t target = r.below(n);
        return Case{{{{n}, draw_vec(r, n)}},
                    [target](const std::vector<Var>& L) { return softmax_cross_entropy(L[0], target); }};
    }));

    out.push_back(check_op("softmax_cross_entropy_batch", cases_per_op, rng, [](Rng& r) {
        const std::size_t m = 2 + r.below(3), n = 2 + r.below(3);
        std::vector<std::size_t> targets(m);
        for (auto& t : targets) t = r.below(n);
        return Case{{{{m, n}, draw_vec(r, m * n)}}, [targets](const std::vector<Var>& L) {
                        return softmax_cross_entropy_batch(L[0], targets);
                    }};
    }));

    // Loss used to train a codebook value: decode through the layers above
    // the adapted one and take cross-entropy against the edit label.
    out.push_back(check_op("value_training_loss", cases_per_op, rng, [](Rng& r) {
        Rng model_rng(r.below(1u << 30));
        auto model = std::make_shared<Model>(std::vector<std::size_t>{3, 5, 4, 2},
                                             std::vector<Activation>{Activation::relu, Activation::relu,
                                                                     Activation::identity},
                                             model_rng);
        const std::size_t l = 1 + r.below(2);
        const std::size_t y = r.below(2);
        const std::size_t dim = model->activation_dim(l);
        return Case{{{{dim}, draw_vec(r, dim, true)}}, [model, l, y](const std::vector<Var>& L) {
                        return softmax_cross_entropy(model->forward_from_layer(L[0], l), y);
                    }};
    }));

    out.push_back(check_op("ewc_penalty", cases_per_op, rng, [](Rng& r) {
        const std::size_t n = 2 + r.below(4);
        auto state = std::make_shared<EwcState>();
        state->anchor = {Tensor::make({n}, draw_vec(r, n))};
        std::vector<double> fisher = draw_vec(r, n);
        for (double& f : fisher) f = std::fabs(f);
        state->fisher = {Tensor::make({n}, fisher)};
        state->lambda = r.uniform(0.5, 3.0);
        return Case{{{{n}, draw_vec(r, n)}},
                    [state](const std::vector<Var>& L) { return ewc_penalty(*state, {L[0]}); }};
    }));

    out.push_back(check_op("defer_mixture_loss", cases_per_op, rng, [](Rng& r) {
        const std::size_t in = 3, out_dim = 3;
        const std::size_t y = r.below(out_dim);
        std::vector<double> q = draw_vec(r, in);
        std::vector<double> base = draw_vec(r, out_dim);
        auto qv = Tensor::vector(q);
        auto basev = Tensor::vector(base);
        return Case{{{{1, in}, draw_vec(r, in)},
                     {{1}, draw_vec(r, 1)},
                     {{out_dim, in}, draw_vec(r, out_dim * in)},
                     {{out_dim}, draw_vec(r, out_dim)}},
                    [qv, basev, y](const std::vector<Var>& L) {
                        Var g = sigmoid(add(matmul(L[0], qv), L[1]));
                        Var o = add(matmul(L[2], qv), L[3]);
                        Var mixed = add(smul(sub(Tensor::scalar(1.0), g), basev), smul(g, o));
                        return softmax_cross_entropy(mixed, y);
                    }};
    }));

    out.push_back(check_op("memory_attention_loss", cases_per_op, rng, [](Rng& r) {
        const std::size_t in = 3, slots = 4, out_dim = 3;
        const std::size_t y = r.below(out_dim);
        auto qv = Tensor::vector(draw_vec(r, in));
        return Case{{{{slots, in}, draw_vec(r, slots * in)},
                     {{slots}, draw_vec(r, slots)},
                     {{slots, out_dim}, draw_vec(r, slots * out_dim)}},
                    [qv, y](const std::vector<Var>& L) {
                        Var a = softmax(add(matmul(L[0], qv), L[1]));
                        Var h = matmul(a, L[2]);
                        return softmax_cross_entropy(h, y);
                    }};
    }));

    return out;
}

}  // namespace grad_suite
