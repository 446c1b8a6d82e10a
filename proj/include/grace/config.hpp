#pragma once

/**
 * Run configuration: one JSON document that pins every knob a command needs,
 * so a run is reproducible from the config file and nothing else.
 *
 * Missing keys fall back to defaults; present keys must have the right type.
 * Command-line flags override individual fields after loading, and commands
 * echo the file they actually ran with into the output directory.
 */

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codebook.hpp"
#include "common.hpp"
#include "editors.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "synthetic.hpp"

namespace grace {

struct RunConfig {
    std::uint64_t seed = 0;

    // model architecture
    std::vector<std::size_t> widths = {2, 100, 100, 2};
    std::vector<Activation> activations = {Activation::relu, Activation::relu, Activation::identity};

    // base training
    std::size_t train_epochs = 200;
    double train_lr = 0.05;

    // editing
    std::string editor = "grace";
    std::size_t layer = 2;
    double eps_init = 0.5;
    ValueInit value_init = ValueInit::cold;
    LabelCheck label_check = LabelCheck::stored;
    double edit_lr = 1.0;   // value/adaptor training (grace, defer, memory)
    double ft_lr = 0.1;     // layer finetuning (ft, ft_ewc, ft_retrain)
    std::size_t max_steps = 100;
    double lambda = 100.0;
    std::size_t retrain_period = 10;
    std::size_t memory_slots = 50;
    OptimizerKind optimizer = OptimizerKind::gd;

    // stream and artifacts
    SyntheticSpec synth;
    std::size_t eval_every = 1;
    std::string out_dir = "out";
    std::string checkpoint;  // empty: <out_dir>/model.json
    bool svg = true;

    // latency benchmark
    std::size_t bench_layer = 1;
    std::vector<std::size_t> bench_sizes = {0, 100, 1000, 4500};
    std::size_t bench_inputs = 200;
    std::size_t bench_repeats = 7;

    std::string checkpoint_path() const {
        return checkpoint.empty() ? out_dir + "/model.json" : checkpoint;
    }
};

inline void validate_config(const RunConfig& c) {
    if (c.widths.size() < 2) throw ConfigError("config: need at least input and output widths");
    if (c.activations.size() != c.widths.size() - 1)
        throw ConfigError("config: one activation per layer required");
    for (std::size_t w : c.widths)
        if (w == 0) throw ConfigError("config: zero layer width");
    if (c.layer == 0 || c.layer >= c.widths.size())
        throw ConfigError("config: edited layer index out of range");
    if (c.editor == "grace" && !(c.eps_init > 0.0)) throw ConfigError("config: eps_init must be positive");
    if (!(c.edit_lr > 0.0) || !(c.ft_lr > 0.0) || !(c.train_lr > 0.0))
        throw ConfigError("config: learning rates must be positive");
    if (c.max_steps == 0) throw ConfigError("config: max_steps must be >= 1");
    if (c.eval_every == 0) throw ConfigError("config: eval_every must be >= 1");
    if (c.editor == "ft_retrain" && c.retrain_period == 0)
        throw ConfigError("config: retrain_period must be >= 1");
    if (c.editor == "memory" && c.memory_slots == 0)
        throw ConfigError("config: memory_slots must be >= 1");
    if (c.bench_layer == 0 || c.bench_layer >= c.widths.size())
        throw ConfigError("config: bench layer index out of range");
    if (c.bench_inputs == 0 || c.bench_repeats == 0)
        throw ConfigError("config: bench inputs and repeats must be >= 1");
    static const char* known[] = {"grace", "ft", "ft_ewc", "ft_retrain", "defer", "memory"};
    for (const char* k : known)
        if (c.editor == k) return;
    throw ConfigError("config: unknown editor '" + c.editor + "'");
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json model;
    model["widths"] = c.widths;
    std::vector<std::string> act_names;
    for (Activation a : c.activations) act_names.push_back(activation_name(a));
    model["activations"] = act_names;

    nlohmann::json edit{
        {"editor", c.editor},
        {"layer", c.layer},
        {"eps_init", c.eps_init},
        {"value_init", value_init_name(c.value_init)},
        {"label_check", label_check_name(c.label_check)},
        {"lr", c.edit_lr},
        {"ft_lr", c.ft_lr},
        {"max_steps", c.max_steps},
        {"lambda", c.lambda},
        {"retrain_period", c.retrain_period},
        {"memory_slots", c.memory_slots},
        {"optimizer", optimizer_kind_name(c.optimizer)},
    };

    nlohmann::json synth{
        {"mean0", c.synth.mean0},
        {"mean1", c.synth.mean1},
        {"sigma", c.synth.sigma},
        {"per_class", c.synth.per_class},
        {"flip_center", c.synth.flip_center},
        {"flip_radius", c.synth.flip_radius},
        {"n_edits", c.synth.n_edits},
        {"n_holdouts", c.synth.n_holdouts},
        {"n_test", c.synth.n_test},
    };

    return nlohmann::json{
        {"seed", c.seed},
        {"model", model},
        {"train", {{"epochs", c.train_epochs}, {"lr", c.train_lr}}},
        {"edit", edit},
        {"synthetic", synth},
        {"eval_every", c.eval_every},
        {"out_dir", c.out_dir},
        {"checkpoint", c.checkpoint},
        {"svg", c.svg},
        {"bench",
         {{"layer", c.bench_layer},
          {"sizes", c.bench_sizes},
          {"inputs", c.bench_inputs},
          {"repeats", c.bench_repeats}}},
    };
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.widths = m.value("widths", c.widths);
            if (m.contains("activations")) {
                c.activations.clear();
                for (const auto& name : m.at("activations"))
                    c.activations.push_back(activation_from_name(name.get<std::string>()));
            } else if (c.widths.size() >= 2) {
                c.activations.assign(c.widths.size() - 2, Activation::relu);
                c.activations.push_back(Activation::identity);
            }
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            c.train_epochs = t.value("epochs", c.train_epochs);
            c.train_lr = t.value("lr", c.train_lr);
        }
        if (j.contains("edit")) {
            const auto& e = j.at("edit");
            c.editor = e.value("editor", c.editor);
            c.layer = e.value("layer", c.layer);
            c.eps_init = e.value("eps_init", c.eps_init);
            if (e.contains("value_init")) c.value_init = value_init_from_name(e.at("value_init"));
            if (e.contains("label_check")) c.label_check = label_check_from_name(e.at("label_check"));
            c.edit_lr = e.value("lr", c.edit_lr);
            c.ft_lr = e.value("ft_lr", c.ft_lr);
            c.max_steps = e.value("max_steps", c.max_steps);
            c.lambda = e.value("lambda", c.lambda);
            c.retrain_period = e.value("retrain_period", c.retrain_period);
            c.memory_slots = e.value("memory_slots", c.memory_slots);
            if (e.contains("optimizer")) c.optimizer = optimizer_kind_from_string(e.at("optimizer"));
        }
        if (j.contains("synthetic")) {
            const auto& s = j.at("synthetic");
            c.synth.mean0 = s.value("mean0", c.synth.mean0);
            c.synth.mean1 = s.value("mean1", c.synth.mean1);
            c.synth.sigma = s.value("sigma", c.synth.sigma);
            c.synth.per_class = s.value("per_class", c.synth.per_class);
            c.synth.flip_center = s.value("flip_center", c.synth.flip_center);
            c.synth.flip_radius = s.value("flip_radius", c.synth.flip_radius);
            c.synth.n_edits = s.value("n_edits", c.synth.n_edits);
            c.synth.n_holdouts = s.value("n_holdouts", c.synth.n_holdouts);
            c.synth.n_test = s.value("n_test", c.synth.n_test);
        }
        c.eval_every = j.value("eval_every", c.eval_every);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.checkpoint = j.value("checkpoint", c.checkpoint);
        c.svg = j.value("svg", c.svg);
        if (j.contains("bench")) {
            const auto& b = j.at("bench");
            c.bench_layer = b.value("layer", c.bench_layer);
            c.bench_sizes = b.value("sizes", c.bench_sizes);
            c.bench_inputs = b.value("inputs", c.bench_inputs);
            c.bench_repeats = b.value("repeats", c.bench_repeats);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.synth.seed = c.seed;
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config: " + path + " is not valid JSON (" + e.what() + ")");
    }
    return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("config: cannot write " + path);
    out << config_to_json(c).dump(2) << '\n';
    if (!out) throw IoError("config: write failed for " + path);
}

// Copies the source config file byte for byte next to the run's outputs.
// Falls back to serializing the effective config when no file was given.
inline void echo_config(const std::string& src_path, const RunConfig& effective,
                        const std::string& out_path) {
    if (!src_path.empty()) {
        std::ifstream in(src_path, std::ios::binary);
        if (in) {
            std::ofstream out(out_path, std::ios::binary);
            if (!out) throw IoError("config: cannot write " + out_path);
            out << in.rdbuf();
            return;
        }
    }
    save_config(effective, out_path);
}

inline Model build_model(const RunConfig& c, Rng& rng) { return Model(c.widths, c.activations, rng); }

// Constructs the configured editor over a model that already holds the
// trained base weights. Ownership of the model stays with the caller.
inline std::unique_ptr<Editor> make_editor(const RunConfig& c, Model& model) {
    if (c.editor == "grace") {
        ValueTrainParams params{c.max_steps, c.edit_lr, c.optimizer};
        return std::make_unique<GraceEditor>(model, c.layer, c.eps_init, params, c.seed + 1, c.value_init,
                                             c.label_check);
    }
    if (c.editor == "ft") return std::make_unique<FtEditor>(model, c.layer, c.ft_lr, c.max_steps);
    if (c.editor == "ft_ewc")
        return std::make_unique<EwcEditor>(model, c.layer, c.ft_lr, c.max_steps, c.lambda);
    if (c.editor == "ft_retrain")
        return std::make_unique<RetrainEditor>(model, c.layer, c.ft_lr, c.max_steps, c.retrain_period);
    if (c.editor == "defer")
        return std::make_unique<DeferEditor>(model, c.layer, c.edit_lr, c.max_steps, c.seed + 1);
    if (c.editor == "memory")
        return std::make_unique<MemoryEditor>(model, c.layer, c.edit_lr, c.max_steps, c.memory_slots,
                                              c.seed + 1);
    throw ConfigError("config: unknown editor '" + c.editor + "'");
}

}  // namespace grace
