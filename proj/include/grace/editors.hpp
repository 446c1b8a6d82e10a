#pragma once

/**
 * Streaming editors behind one interface.
 *
 * An editor wraps a trained model and handles one wrong prediction at a
 * time through apply_edit. The harness only sees predict/apply_edit, so
 * every method runs under the identical loop:
 *
 *   grace       codebook adaptor (codebook.hpp); model frozen
 *   ft          finetune the chosen layer on each mistake
 *   ft_ewc      ft plus a diagonal elastic-weight penalty toward the
 *               pre-editing weights
 *   ft_retrain  ft, but every `period` edits reset the layer and refit
 *               the full edit history
 *   defer       trained sigmoid gate mixing the frozen layer output with
 *               a trained replacement; model frozen
 *   memory      trained slot memory addressed by softmax attention over
 *               the layer input; model frozen
 */

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "codebook.hpp"
#include "common.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grace {

class Editor {
public:
    virtual ~Editor() = default;
    virtual std::string kind() const = 0;
    virtual std::size_t predict(const Var& x) = 0;
    virtual void apply_edit(const Var& x, std::size_t y, std::size_t step) = 0;

    virtual std::size_t key_count() const { return 0; }
    virtual const Codebook* codebook() const { return nullptr; }
    virtual double holdout_capture(const std::vector<Var>&) const { return 0.0; }

    double accuracy(const LabeledDataset& data) {
        if (data.size() == 0) throw ArgumentError("Editor::accuracy: empty dataset");
        std::size_t hits = 0;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (predict(data.inputs[i]) == data.labels[i]) ++hits;
        return static_cast<double>(hits) / static_cast<double>(data.size());
    }
};

// ---------------------------------------------------------------------------
// grace

class GraceEditor : public Editor {
public:
    GraceEditor(Model& model, std::size_t layer_index, double eps_init, ValueTrainParams train_params,
                std::uint64_t seed, ValueInit value_init = ValueInit::cold,
                LabelCheck label_check = LabelCheck::stored)
        : model_(model),
          cb_(layer_index, eps_init, model.activation_dim(layer_index - 1), model.activation_dim(layer_index),
              value_init, label_check),
          train_params_(train_params),
          rng_(seed) {
        check_codebook_fits(model_, cb_);
        model_.set_frozen(true);
    }

    std::string kind() const override { return "grace"; }

    std::size_t predict(const Var& x) override { return adapted_predict(model_, cb_, x); }

    void apply_edit(const Var& x, std::size_t y, std::size_t step) override {
        events_.push_back(update_codebook(model_, cb_, x, y, step, train_params_, rng_));
    }

    std::size_t key_count() const override { return cb_.size(); }
    const Codebook* codebook() const override { return &cb_; }
    double holdout_capture(const std::vector<Var>& holdouts) const override {
        return capture_fraction(model_, cb_, holdouts);
    }

    const std::vector<MaintenanceEvent>& events() const { return events_; }
    Codebook& mutable_codebook() { return cb_; }

private:
    Model& model_;
    Codebook cb_;
    ValueTrainParams train_params_;
    Rng rng_;
    std::vector<MaintenanceEvent> events_;
};

// ---------------------------------------------------------------------------
// ft family

// Gradient descent on one layer until the input is classified as y or the
// step budget runs out. extra_loss, when present, is added to the task loss
// (the EWC penalty hooks in here).
template <typename ExtraLoss>
inline void finetune_layer(Model& model, std::size_t l, const Var& x, std::size_t y, double lr,
                           std::size_t max_steps, ExtraLoss&& extra_loss) {
    if (model.frozen()) throw StateError("finetune_layer: model is frozen");
    std::vector<Var> params = model.layer_parameters(l);
    for (std::size_t step = 0; step < max_steps; ++step) {
        try {
            Var logits = model.forward(x);
            if (argmax(std::span<const double>(logits->data)) == y) return;
            Var loss = softmax_cross_entropy(logits, y);
            Var extra = extra_loss();
            if (extra) loss = add(loss, extra);
            for (const Var& p : params) p->zero_grad();
            backward(loss);
            sgd_step(params, lr);
        } catch (const NumericError& e) {
            throw TrainingError("finetune_layer: non-finite loss at step " + std::to_string(step) + " (" +
                                e.what() + ")");
        }
    }
}

inline void ft_edit(Model& model, std::size_t l, const Var& x, std::size_t y, double lr, std::size_t max_steps) {
    finetune_layer(model, l, x, y, lr, max_steps, []() { return Var(); });
}

class FtEditor : public Editor {
public:
    FtEditor(Model& model, std::size_t layer_index, double lr, std::size_t max_steps)
        : model_(model), layer_(layer_index), lr_(lr), max_steps_(max_steps) {
        if (model_.frozen()) throw StateError("FtEditor: model is frozen");
        model_.layer(layer_);  // validates the index
    }

    std::string kind() const override { return "ft"; }
    std::size_t predict(const Var& x) override { return model_.predict(x); }
    void apply_edit(const Var& x, std::size_t y, std::size_t) override {
        ft_edit(model_, layer_, x, y, lr_, max_steps_);
    }

protected:
    Model& model_;
    std::size_t layer_;
    double lr_;
    std::size_t max_steps_;
};

// ---------------------------------------------------------------------------
// ft + ewc

struct EwcState {
    std::vector<Var> anchor;  // pre-editing layer parameters
    std::vector<Var> fisher;  // diagonal estimate, same shapes, elementwise >= 0
    double lambda = 100.0;
};

// (lambda/2) * sum_i F_i * (theta_i - anchor_i)^2, as a differentiable scalar.
inline Var ewc_penalty(const EwcState& state, const std::vector<Var>& current) {
    if (state.anchor.size() != current.size() || state.fisher.size() != current.size())
        throw DimensionError("ewc_penalty: parameter list lengths disagree");
    Var total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < current.size(); ++i) {
        Var d = sub(current[i], state.anchor[i]);
        total = add(total, sum(mul(state.fisher[i], mul(d, d))));
    }
    return scale(total, state.lambda / 2.0);
}

class EwcEditor : public FtEditor {
public:
    EwcEditor(Model& model, std::size_t layer_index, double lr, std::size_t max_steps, double lambda)
        : FtEditor(model, layer_index, lr, max_steps) {
        state_.lambda = lambda;
        for (const Var& p : model_.layer_parameters(layer_)) {
            state_.anchor.push_back(Tensor::make(p->shape, p->data));
            state_.fisher.push_back(Tensor::zeros(p->shape));
        }
    }

    std::string kind() const override { return "ft_ewc"; }

    void apply_edit(const Var& x, std::size_t y, std::size_t) override {
        std::vector<Var> params = model_.layer_parameters(layer_);
        finetune_layer(model_, layer_, x, y, lr_, max_steps_,
                       [&]() { return ewc_penalty(state_, params); });
        seen_.push_back({x, y});
        refresh_fisher(params);
    }

    const EwcState& state() const { return state_; }

private:
    // Diagonal Fisher as the mean squared task-loss gradient over every
    // edit input seen so far.
    void refresh_fisher(const std::vector<Var>& params) {
        for (Var& f : state_.fisher) std::fill(f->data.begin(), f->data.end(), 0.0);
        for (const auto& [x, y] : seen_) {
            for (const Var& p : params) p->zero_grad();
            Var loss = softmax_cross_entropy(model_.forward(x), y);
            backward(loss);
            for (std::size_t i = 0; i < params.size(); ++i)
                for (std::size_t k = 0; k < params[i]->size(); ++k)
                    state_.fisher[i]->data[k] += params[i]->grad[k] * params[i]->grad[k];
        }
        const double n = static_cast<double>(seen_.size());
        for (Var& f : state_.fisher)
            for (double& v : f->data) v /= n;
    }

    EwcState state_;
    std::vector<std::pair<Var, std::size_t>> seen_;
};

// ---------------------------------------------------------------------------
// ft + periodic retrain

class RetrainEditor : public FtEditor {
public:
    RetrainEditor(Model& model, std::size_t layer_index, double lr, std::size_t max_steps, std::size_t period)
        : FtEditor(model, layer_index, lr, max_steps), period_(period) {
        if (period_ == 0) throw ConfigError("RetrainEditor: period must be >= 1");
        for (const Var& p : model_.layer_parameters(layer_)) snapshot_.push_back(p->data);
    }

    std::string kind() const override { return "ft_retrain"; }

    void apply_edit(const Var& x, std::size_t y, std::size_t) override {
        history_.push_back({x, y});
        if (history_.size() % period_ == 0) {
            retrain_from_snapshot();
        } else {
            ft_edit(model_, layer_, x, y, lr_, max_steps_);
        }
    }

    // Resets the layer to its pre-editing weights, then cycles over the
    // cached edits until every one is fit or the round budget runs out.
    void retrain_from_snapshot() {
        std::vector<Var> params = model_.layer_parameters(layer_);
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = snapshot_[i];
        if (history_.empty()) return;
        for (std::size_t round = 0; round < max_steps_; ++round) {
            bool all_fit = true;
            for (const auto& [x, y] : history_) {
                if (model_.predict(x) == y) continue;
                all_fit = false;
                ft_edit(model_, layer_, x, y, lr_, 1);
            }
            if (all_fit) return;
        }
    }

    std::size_t cached_edits() const { return history_.size(); }

private:
    std::size_t period_;
    std::vector<std::vector<double>> snapshot_;
    std::vector<std::pair<Var, std::size_t>> history_;
};

// ---------------------------------------------------------------------------
// defer

struct DeferAdaptor {
    std::size_t layer_index;
    Var gate_w;  // [1 x in]
    Var gate_b;  // [1]
    Var gen_w;   // [out x in]
    Var gen_b;   // [out]

    DeferAdaptor(std::size_t layer_index, std::size_t in, std::size_t out, Rng& rng)
        : layer_index(layer_index) {
        const double ag = std::sqrt(6.0 / static_cast<double>(in + 1));
        const double ao = std::sqrt(6.0 / static_cast<double>(in + out));
        gate_w = Tensor::uniform({1, in}, -ag, ag, rng, true);
        gate_b = Tensor::zeros({1}, true);
        gen_w = Tensor::uniform({out, in}, -ao, ao, rng, true);
        gen_b = Tensor::zeros({out}, true);
    }

    std::vector<Var> parameters() { return {gate_w, gate_b, gen_w, gen_b}; }

    Var gate(const Var& q) const { return sigmoid(add(matmul(gate_w, q), gate_b)); }
    Var generator(const Var& q) const { return add(matmul(gen_w, q), gen_b); }
};

// h^l := (1 - g) * f^l(h^{l-1}) + g * o(h^{l-1}), then the remaining layers.
inline Var defer_forward(const Model& model, const DeferAdaptor& ad, const Var& x) {
    const std::size_t l = ad.layer_index;
    Var q = model.forward_to_layer(x, l - 1);
    Var g = ad.gate(q);
    Var base = model.apply_layer(q, l);
    Var mixed = add(smul(sub(Tensor::scalar(1.0), g), base), smul(g, ad.generator(q)));
    return model.forward_from_layer(mixed, l);
}

inline void defer_edit(const Model& model, DeferAdaptor& ad, const Var& x, std::size_t y, double lr,
                       std::size_t max_steps) {
    std::vector<Var> params = ad.parameters();
    for (std::size_t step = 0; step < max_steps; ++step) {
        try {
            Var logits = defer_forward(model, ad, x);
            if (argmax(std::span<const double>(logits->data)) == y) return;
            Var loss = softmax_cross_entropy(logits, y);
            for (const Var& p : params) p->zero_grad();
            backward(loss);
            sgd_step(params, lr);
        } catch (const NumericError& e) {
            throw TrainingError("defer_edit: non-finite loss at step " + std::to_string(step) + " (" +
                                e.what() + ")");
        }
    }
}

class DeferEditor : public Editor {
public:
    DeferEditor(Model& model, std::size_t layer_index, double lr, std::size_t max_steps, std::uint64_t seed)
        : model_(model),
          rng_(seed),
          adaptor_(layer_index, model.activation_dim(layer_index - 1), model.activation_dim(layer_index), rng_),
          lr_(lr),
          max_steps_(max_steps) {
        model_.set_frozen(true);
    }

    std::string kind() const override { return "defer"; }

    std::size_t predict(const Var& x) override {
        NoGradGuard inference;
        Var logits = defer_forward(model_, adaptor_, x);
        return argmax(std::span<const double>(logits->data));
    }

    void apply_edit(const Var& x, std::size_t y, std::size_t) override {
        defer_edit(model_, adaptor_, x, y, lr_, max_steps_);
    }

    DeferAdaptor& adaptor() { return adaptor_; }

private:
    Model& model_;
    Rng rng_;
    DeferAdaptor adaptor_;
    double lr_;
    std::size_t max_steps_;
};

// ---------------------------------------------------------------------------
// memory

struct MemoryAdaptor {
    std::size_t layer_index;
    Var memory;  // [slots x out]
    Var att_w;   // [slots x in]
    Var att_b;   // [slots]

    MemoryAdaptor(std::size_t layer_index, std::size_t in, std::size_t out, std::size_t slots, Rng& rng)
        : layer_index(layer_index) {
        if (slots == 0) throw ConfigError("MemoryAdaptor: need at least one slot");
        const double aa = std::sqrt(6.0 / static_cast<double>(in + slots));
        memory = Tensor::uniform({slots, out}, -0.1, 0.1, rng, true);
        att_w = Tensor::uniform({slots, in}, -aa, aa, rng, true);
        att_b = Tensor::zeros({slots}, true);
    }

    std::vector<Var> parameters() { return {memory, att_w, att_b}; }

    Var attention(const Var& q) const { return softmax(add(matmul(att_w, q), att_b)); }
};

// h^l := softmax(attention(h^{l-1})) . M, then the remaining layers.
inline Var memory_forward(const Model& model, const MemoryAdaptor& ad, const Var& x) {
    const std::size_t l = ad.layer_index;
    Var q = model.forward_to_layer(x, l - 1);
    Var h = matmul(ad.attention(q), ad.memory);
    return model.forward_from_layer(h, l);
}

inline void memory_edit(const Model& model, MemoryAdaptor& ad, const Var& x, std::size_t y, double lr,
                        std::size_t max_steps) {
    std::vector<Var> params = ad.parameters();
    for (std::size_t step = 0; step < max_steps; ++step) {
        try {
            Var logits = memory_forward(model, ad, x);
            if (argmax(std::span<const double>(logits->data)) == y) return;
            Var loss = softmax_cross_entropy(logits, y);
            for (const Var& p : params) p->zero_grad();
            backward(loss);
            sgd_step(params, lr);
        } catch (const NumericError& e) {
            throw TrainingError("memory_edit: non-finite loss at step " + std::to_string(step) + " (" +
                                e.what() + ")");
        }
    }
}

class MemoryEditor : public Editor {
public:
    MemoryEditor(Model& model, std::size_t layer_index, double lr, std::size_t max_steps, std::size_t slots,
                 std::uint64_t seed)
        : model_(model),
          rng_(seed),
          adaptor_(layer_index, model.activation_dim(layer_index - 1), model.activation_dim(layer_index), slots,
                   rng_),
          lr_(lr),
          max_steps_(max_steps) {
        model_.set_frozen(true);
    }

    std::string kind() const override { return "memory"; }

    std::size_t predict(const Var& x) override {
        NoGradGuard inference;
        Var logits = memory_forward(model_, adaptor_, x);
        return argmax(std::span<const double>(logits->data));
    }

    void apply_edit(const Var& x, std::size_t y, std::size_t) override {
        memory_edit(model_, adaptor_, x, y, lr_, max_steps_);
    }

    MemoryAdaptor& adaptor() { return adaptor_; }

private:
    Model& model_;
    Rng rng_;
    MemoryAdaptor adaptor_;
    double lr_;
    std::size_t max_steps_;
};

}  // namespace grace
