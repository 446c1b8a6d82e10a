#pragma once

/**
 * Small feedforward classifier with explicit per-layer access.
 *
 * Layers are indexed 1..L and activations 0..L, with h^0 the raw input and
 * h^L the logits. The split points matter: editors query the activation
 * BELOW their target layer (h^{l-1}) and substitute the activation AT that
 * layer (h^l), so forward_to_layer / forward_from_layer are the primitive
 * f is built from. forward(x) is literally forward_from_layer(x, 0), which
 * makes the split-composition identity hold bit-for-bit by construction.
 */

#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grace {

enum class Activation { relu, identity };

inline std::string activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "identity";
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "identity") return Activation::identity;
    throw FormatError("unknown activation: " + name);
}

struct Layer {
    Var weight;  // [out x in]
    Var bias;    // [out]
    Activation activation;

    std::size_t in_dim() const { return weight->shape[1]; }
    std::size_t out_dim() const { return weight->shape[0]; }
};

struct LabeledDataset {
    std::vector<Var> inputs;
    std::vector<std::size_t> labels;
    std::string name;

    std::size_t size() const { return inputs.size(); }

    void check_consistent(std::size_t n_classes) const {
        if (inputs.size() != labels.size())
            throw DimensionError("LabeledDataset: inputs and labels lengths disagree");
        for (std::size_t y : labels)
            if (y >= n_classes) throw RangeError("LabeledDataset: label out of class range");
    }
};

class Model {
public:
    // sizes = {in, hidden..., out}; one activation per layer.
    Model(const std::vector<std::size_t>& sizes, const std::vector<Activation>& activations, Rng& rng) {
        if (sizes.size() < 2) throw ArgumentError("Model: need at least input and output sizes");
        if (activations.size() != sizes.size() - 1)
            throw ArgumentError("Model: one activation per layer required");
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const std::size_t in = sizes[l], out = sizes[l + 1];
            if (in == 0 || out == 0) throw ArgumentError("Model: zero-width layer");
            const double a = std::sqrt(6.0 / static_cast<double>(in + out));
            layers_.push_back(Layer{
                Tensor::uniform({out, in}, -a, a, rng, true),
                Tensor::zeros({out}, true),
                activations[l],
            });
        }
    }

    Model(std::vector<Layer> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw ArgumentError("Model: no layers");
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
            if (layers_[i].out_dim() != layers_[i + 1].in_dim())
                throw DimensionError("Model: layer dimension chain broken");
    }

    std::size_t layer_count() const { return layers_.size(); }
    std::size_t input_dim() const { return layers_.front().in_dim(); }
    std::size_t output_dim() const { return layers_.back().out_dim(); }

    const Layer& layer(std::size_t l) const {
        check_layer_index(l);
        return layers_[l - 1];
    }
    Layer& layer(std::size_t l) {
        check_layer_index(l);
        return layers_[l - 1];
    }

    // Dimension of activation h^l (l = 0 is the input).
    std::size_t activation_dim(std::size_t l) const {
        if (l > layer_count()) throw RangeError("Model: activation index out of range");
        return l == 0 ? input_dim() : layers_[l - 1].out_dim();
    }

    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen) { frozen_ = frozen; }

    // h^l from h^{l-1}.
    Var apply_layer(const Var& h, std::size_t l) const {
        check_layer_index(l);
        const Layer& ly = layers_[l - 1];
        if (h->rank() != 1 || h->size() != ly.in_dim())
            throw DimensionError("Model::apply_layer: activation does not match layer input");
        Var z = add(matmul(ly.weight, h), ly.bias);
        return ly.activation == Activation::relu ? relu(z) : z;
    }

    // h^l for activation index 0 <= l <= L (h^0 = x unchanged).
    Var forward_to_layer(const Var& x, std::size_t l) const {
        if (l > layer_count()) throw RangeError("Model::forward_to_layer: layer index out of range");
        if (x->rank() != 1 || x->size() != input_dim())
            throw DimensionError("Model::forward_to_layer: input dimension mismatch");
        Var h = x;
        for (std::size_t i = 1; i <= l; ++i) h = apply_layer(h, i);
        return h;
    }

    // Logits from activation h^l; applies layers l+1..L.
    Var forward_from_layer(const Var& h, std::size_t l) const {
        if (l > layer_count()) throw RangeError("Model::forward_from_layer: layer index out of range");
        if (h->rank() != 1 || h->size() != activation_dim(l))
            throw DimensionError("Model::forward_from_layer: activation dimension mismatch");
        Var cur = h;
        for (std::size_t i = l + 1; i <= layer_count(); ++i) cur = apply_layer(cur, i);
        return cur;
    }

    Var forward(const Var& x) const { return forward_from_layer(x, 0); }

    std::size_t predict(const Var& x) const {
        NoGradGuard inference;
        Var logits = forward(x);
        return argmax(std::span<const double>(logits->data));
    }

    double accuracy(const LabeledDataset& data) const {
        NoGradGuard inference;
        if (data.size() == 0) throw ArgumentError("Model::accuracy: empty dataset");
        data.check_consistent(output_dim());
        std::size_t hits = 0;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (predict(data.inputs[i]) == data.labels[i]) ++hits;
        return static_cast<double>(hits) / static_cast<double>(data.size());
    }

    std::vector<Var> parameters() {
        std::vector<Var> out;
        for (Layer& ly : layers_) {
            out.push_back(ly.weight);
            out.push_back(ly.bias);
        }
        return out;
    }

    std::vector<Var> layer_parameters(std::size_t l) {
        check_layer_index(l);
        return {layers_[l - 1].weight, layers_[l - 1].bias};
    }

    // FNV-1a over every weight and bias byte, in layer order.
    std::uint64_t weight_digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const Layer& ly : layers_) {
            h = fnv1a64(ly.weight->data, h);
            h = fnv1a64(ly.bias->data, h);
        }
        return h;
    }

    // Digest of every layer except l; editors confined to one layer must
    // leave this unchanged.
    std::uint64_t weight_digest_excluding(std::size_t l) const {
        check_layer_index(l);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t i = 1; i <= layer_count(); ++i) {
            if (i == l) continue;
            h = fnv1a64(layers_[i - 1].weight->data, h);
            h = fnv1a64(layers_[i - 1].bias->data, h);
        }
        return h;
    }

private:
    void check_layer_index(std::size_t l) const {
        if (l == 0 || l > layer_count()) throw RangeError("Model: layer index out of range");
    }

    std::vector<Layer> layers_;
    bool frozen_ = false;
};

// Per-sample SGD over shuffled epochs; order comes from rng so the run is
// reproducible from the seed alone. Returns final training accuracy.
inline double train_base(Model& model, const LabeledDataset& data, std::size_t epochs, double lr, Rng& rng) {
    if (model.frozen()) throw StateError("train_base: model is frozen");
    if (data.size() == 0) throw ArgumentError("train_base: empty dataset");
    data.check_consistent(model.output_dim());

    std::vector<Var> params = model.parameters();
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (std::size_t idx : order) {
            for (const Var& p : params) p->zero_grad();
            Var loss = softmax_cross_entropy(model.forward(data.inputs[idx]), data.labels[idx]);
            backward(loss);
            sgd_step(params, lr);
        }
    }
    return model.accuracy(data);
}

// ---------------------------------------------------------------------------
// checkpoint files

inline nlohmann::json model_to_json(const Model& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 1; l <= model.layer_count(); ++l) {
        const Layer& ly = model.layer(l);
        layers.push_back({
            {"in", ly.in_dim()},
            {"out", ly.out_dim()},
            {"activation", activation_name(ly.activation)},
            {"weight", ly.weight->data},
            {"bias", ly.bias->data},
        });
    }
    return nlohmann::json{{"version", 1}, {"kind", "model"}, {"layers", layers}};
}

inline Model model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != 1) throw FormatError("model checkpoint: unsupported version");
        if (j.at("kind").get<std::string>() != "model") throw FormatError("model checkpoint: wrong kind");
        std::vector<Layer> layers;
        for (const auto& lj : j.at("layers")) {
            const auto in = lj.at("in").get<std::size_t>();
            const auto out = lj.at("out").get<std::size_t>();
            auto w = lj.at("weight").get<std::vector<double>>();
            auto b = lj.at("bias").get<std::vector<double>>();
            if (w.size() != in * out) throw FormatError("model checkpoint: weight size does not match shape");
            if (b.size() != out) throw FormatError("model checkpoint: bias size does not match shape");
            layers.push_back(Layer{
                Tensor::make({out, in}, std::move(w), true),
                Tensor::make({out}, std::move(b), true),
                activation_from_name(lj.at("activation").get<std::string>()),
            });
        }
        return Model(std::move(layers));  // constructor re-validates the chain
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model checkpoint: ") + e.what());
    }
}

inline void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_model: cannot open " + path);
    out << model_to_json(model).dump(2) << '\n';
    if (!out) throw IoError("save_model: write failed for " + path);
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_model: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("load_model: ") + e.what());
    }
    return model_from_json(j);
}

}  // namespace grace
