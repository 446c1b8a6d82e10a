#pragma once

/**
 * Discrete key-value adaptor wrapped around one model layer.
 *
 * Each entry is a cached query activation (the key), a trainable replacement
 * activation (the value), a radius, and the label of the edit that created
 * it. Inference computes the layer's input activation, finds the nearest key,
 * and substitutes the entry's value when the query falls strictly inside that
 * entry's ball; otherwise the base model's output is passed through untouched,
 * bit for bit.
 *
 * Maintenance on a wrong prediction takes one of three branches:
 *   add     first entry, or the query is far from every existing ball
 *   expand  nearest entry carries the same label: grow its radius in place
 *   split   nearest entry disagrees on label: shrink it to half the query
 *           distance and add a new entry with the same half radius
 *
 * The branch logic lives in apply_maintenance, which takes the trained value
 * as a factory callback. That keeps geometry decisions testable against an
 * independent re-implementation without running any training.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grace {

enum class ValueInit { cold, warm };
enum class LabelCheck { stored, decode };
enum class EventTag { added, expanded, split };

inline std::string value_init_name(ValueInit v) { return v == ValueInit::cold ? "cold" : "warm"; }
inline ValueInit value_init_from_name(const std::string& s) {
    if (s == "cold") return ValueInit::cold;
    if (s == "warm") return ValueInit::warm;
    throw FormatError("unknown value init: " + s);
}

inline std::string label_check_name(LabelCheck c) { return c == LabelCheck::stored ? "stored" : "decode"; }
inline LabelCheck label_check_from_name(const std::string& s) {
    if (s == "stored") return LabelCheck::stored;
    if (s == "decode") return LabelCheck::decode;
    throw FormatError("unknown label check: " + s);
}

inline std::string event_tag_name(EventTag t) {
    switch (t) {
        case EventTag::added: return "added";
        case EventTag::expanded: return "expanded";
        case EventTag::split: return "split";
    }
    throw StateError("event_tag_name: bad tag");
}

struct CodebookEntry {
    std::vector<double> key;  // frozen once written
    Var value;                // trainable activation replacement
    double radius;
    std::size_t label;
    std::size_t created_at;
};

struct NearestKey {
    std::size_t index;
    double distance;
};

struct MaintenanceEvent {
    EventTag tag;
    std::size_t entry_index;  // entry created (add/split) or grown (expand)
    double d_min;             // NaN when the codebook was empty
    double epsilon_after;     // radius of entry_index after the event
    std::size_t step;
};

class Codebook {
public:
    Codebook(std::size_t layer_index, double eps_init, std::size_t key_dim, std::size_t value_dim,
             ValueInit value_init = ValueInit::cold, LabelCheck label_check = LabelCheck::stored)
        : layer_index_(layer_index),
          eps_init_(eps_init),
          key_dim_(key_dim),
          value_dim_(value_dim),
          value_init_(value_init),
          label_check_(label_check) {
        if (layer_index == 0) throw ConfigError("Codebook: layer index must be >= 1");
        if (!(eps_init > 0.0) || !std::isfinite(eps_init)) throw ConfigError("Codebook: eps_init must be positive");
        if (key_dim == 0 || value_dim == 0) throw ConfigError("Codebook: zero dimensions");
    }

    std::size_t layer_index() const { return layer_index_; }
    double eps_init() const { return eps_init_; }
    std::size_t key_dim() const { return key_dim_; }
    std::size_t value_dim() const { return value_dim_; }
    ValueInit value_init() const { return value_init_; }
    LabelCheck label_check() const { return label_check_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t edits_applied() const { return edits_applied_; }

    const CodebookEntry& entry(std::size_t i) const {
        if (i >= entries_.size()) throw RangeError("Codebook: entry index out of range");
        return entries_[i];
    }

    // Parameters one entry costs: its key, its value, and one radius.
    std::size_t params_per_entry() const { return key_dim_ + value_dim_ + 1; }
    std::size_t param_count() const { return entries_.size() * params_per_entry(); }

    // Nearest entry by Euclidean distance; ties go to the lowest index.
    // Squared distances are compared and only the winner is rooted, so
    // ordering is exact. Keys are mirrored per dimension (one contiguous
    // array per coordinate), so the scan reads unit-stride blocks of four
    // entries at a time; each entry's accumulation still runs in dimension
    // order, so results match a plain one-key-at-a-time scan bit for bit.
    std::optional<NearestKey> nearest_key(std::span<const double> query) const {
        if (query.size() != key_dim_) throw DimensionError("Codebook::nearest_key: query dimension mismatch");
        if (entries_.empty()) return std::nullopt;
        const std::size_t n = entries_.size(), dim = key_dim_;
        std::size_t best = 0;
        double best_sq = std::numeric_limits<double>::infinity();
        auto consider = [&](std::size_t i, double sq) {
            if (sq < best_sq) {
                best_sq = sq;
                best = i;
            }
        };
        std::size_t i = 0;
        for (; i + 4 <= n; i += 4) {
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double q = query[d];
                const double* c = key_cols_[d].data() + i;
                const double e0 = q - c[0];
                const double e1 = q - c[1];
                const double e2 = q - c[2];
                const double e3 = q - c[3];
                a0 += e0 * e0;
                a1 += e1 * e1;
                a2 += e2 * e2;
                a3 += e3 * e3;
            }
            consider(i, a0);
            consider(i + 1, a1);
            consider(i + 2, a2);
            consider(i + 3, a3);
        }
        for (; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = query[d] - key_cols_[d][i];
                acc += diff * diff;
            }
            consider(i, acc);
        }
        return NearestKey{best, std::sqrt(best_sq)};
    }

    // Entry claiming the query, if its ball strictly contains it.
    std::optional<std::size_t> lookup(std::span<const double> query) const {
        auto nn = nearest_key(query);
        if (nn && nn->distance < entries_[nn->index].radius) return nn->index;
        return std::nullopt;
    }

    // Runs one maintenance event. make_value() is invoked only when a new
    // entry is created (add and split branches); label_matches decides the
    // expand-vs-split question for the nearest entry.
    template <typename ValueFactory, typename LabelMatcher>
    MaintenanceEvent apply_maintenance(std::span<const double> query, std::size_t label, std::size_t step,
                                       ValueFactory&& make_value, LabelMatcher&& label_matches) {
        if (query.size() != key_dim_) throw DimensionError("Codebook::apply_maintenance: query dimension mismatch");
        auto nn = nearest_key(query);
        ++edits_applied_;

        if (!nn || nn->distance > entries_[nn->index].radius + eps_init_) {
            const std::size_t idx = insert_entry(query, make_value(), eps_init_, label, step);
            const double d_min = nn ? nn->distance : std::numeric_limits<double>::quiet_NaN();
            return MaintenanceEvent{EventTag::added, idx, d_min, eps_init_, step};
        }

        CodebookEntry& near = entries_[nn->index];
        if (label_matches(near, label)) {
            near.radius += eps_init_;
            return MaintenanceEvent{EventTag::expanded, nn->index, nn->distance, near.radius, step};
        }

        if (nn->distance == 0.0)
            throw EditConflictError("Codebook::apply_maintenance: identical query with conflicting label");
        const double half = nn->distance / 2.0;
        near.radius = half;
        const std::size_t idx = insert_entry(query, make_value(), half, label, step);
        return MaintenanceEvent{EventTag::split, idx, nn->distance, half, step};
    }

    // Convenience overload using the stored-label comparison.
    template <typename ValueFactory>
    MaintenanceEvent apply_maintenance(std::span<const double> query, std::size_t label, std::size_t step,
                                       ValueFactory&& make_value) {
        return apply_maintenance(query, label, step, std::forward<ValueFactory>(make_value),
                                 [](const CodebookEntry& e, std::size_t y) { return e.label == y; });
    }

    std::size_t insert_entry(std::span<const double> key, Var value, double radius, std::size_t label,
                             std::size_t created_at) {
        if (key.size() != key_dim_) throw DimensionError("Codebook::insert_entry: key dimension mismatch");
        if (!value || value->rank() != 1 || value->size() != value_dim_)
            throw DimensionError("Codebook::insert_entry: value dimension mismatch");
        if (radius < 0.0 || !std::isfinite(radius)) throw RangeError("Codebook::insert_entry: bad radius");
        entries_.push_back(CodebookEntry{std::vector<double>(key.begin(), key.end()), std::move(value), radius,
                                         label, created_at});
        if (key_cols_.empty()) key_cols_.resize(key_dim_);
        for (std::size_t d = 0; d < key_dim_; ++d) key_cols_[d].push_back(key[d]);
        return entries_.size() - 1;
    }

    void set_edits_applied(std::size_t n) { edits_applied_ = n; }

private:
    std::size_t layer_index_;
    double eps_init_;
    std::size_t key_dim_;
    std::size_t value_dim_;
    ValueInit value_init_;
    LabelCheck label_check_;
    std::vector<CodebookEntry> entries_;
    std::vector<std::vector<double>> key_cols_;  // per-dimension key mirror, unit stride over entries
    std::size_t edits_applied_ = 0;
};

// ---------------------------------------------------------------------------
// inference through the adaptor

inline void check_codebook_fits(const Model& model, const Codebook& cb) {
    if (cb.layer_index() > model.layer_count())
        throw ConfigError("codebook layer index exceeds model depth");
    if (cb.key_dim() != model.activation_dim(cb.layer_index() - 1) ||
        cb.value_dim() != model.activation_dim(cb.layer_index()))
        throw ConfigError("codebook dimensions do not match the model layer");
}

inline Var adapted_forward(const Model& model, const Codebook& cb, const Var& x) {
    check_codebook_fits(model, cb);
    NoGradGuard inference;
    const std::size_t l = cb.layer_index();
    Var query = model.forward_to_layer(x, l - 1);
    if (auto hit = cb.lookup(query->data)) {
        const CodebookEntry& e = cb.entry(*hit);
        Var value = Tensor::make(e.value->shape, e.value->data);
        return model.forward_from_layer(value, l);
    }
    return model.forward_from_layer(query, l - 1);
}

inline std::size_t adapted_predict(const Model& model, const Codebook& cb, const Var& x) {
    Var logits = adapted_forward(model, cb, x);
    return argmax(std::span<const double>(logits->data));
}

inline double adapted_accuracy(const Model& model, const Codebook& cb, const LabeledDataset& data) {
    if (data.size() == 0) throw ArgumentError("adapted_accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (adapted_predict(model, cb, data.inputs[i]) == data.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Fraction of inputs whose query fires the codebook, meaning the nearest
// key sits closer than its own radius.
inline double capture_fraction(const Model& model, const Codebook& cb, const std::vector<Var>& inputs) {
    if (inputs.empty()) return 0.0;
    check_codebook_fits(model, cb);
    NoGradGuard inference;
    std::size_t captured = 0;
    for (const Var& x : inputs) {
        Var query = model.forward_to_layer(x, cb.layer_index() - 1);
        if (cb.lookup(query->data)) ++captured;
    }
    return static_cast<double>(captured) / static_cast<double>(inputs.size());
}

// ---------------------------------------------------------------------------
// value training

struct ValueTrainParams {
    std::size_t max_steps = 100;
    double lr = 1.0;
    OptimizerKind optimizer = OptimizerKind::gd;
};

// Trains a fresh value so that decoding it through layers l+1..L yields
// label y. Only the value receives updates; the model must already be
// frozen. Early-stops the moment the decoded prediction matches.
inline Var train_value(const Model& model, const Codebook& cb, const Var& query, std::size_t y,
                       const ValueTrainParams& params, Rng& rng) {
    check_codebook_fits(model, cb);
    if (!model.frozen()) throw StateError("train_value: model must be frozen");
    if (y >= model.output_dim()) throw RangeError("train_value: label out of class range");
    const std::size_t l = cb.layer_index();

    Var v;
    if (cb.value_init() == ValueInit::cold) {
        v = Tensor::uniform({cb.value_dim()}, 0.0, 1.0, rng, true);
    } else {
        NoGradGuard inference;
        Var warm = model.apply_layer(query, l);
        v = Tensor::make(warm->shape, warm->data, true);
    }

    Optimizer opt(params.optimizer, params.lr);
    for (std::size_t step = 0; step < params.max_steps; ++step) {
        try {
            Var logits = model.forward_from_layer(v, l);
            if (argmax(std::span<const double>(logits->data)) == y) return v;
            Var loss = softmax_cross_entropy(logits, y);
            v->zero_grad();
            backward(loss);
            opt.step({v});
        } catch (const NumericError& e) {
            throw TrainingError("train_value: non-finite loss at step " + std::to_string(step) + " (" +
                                e.what() + ")");
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// the edit entry point

// Handles one wrong prediction: trains a value if a new entry is needed and
// applies the maintenance branch. Precondition: the adapted model currently
// gets x wrong (callers edit only on mistakes).
inline MaintenanceEvent update_codebook(const Model& model, Codebook& cb, const Var& x, std::size_t y,
                                        std::size_t step, const ValueTrainParams& params, Rng& rng) {
    check_codebook_fits(model, cb);
    if (adapted_predict(model, cb, x) == y)
        throw ContractError("update_codebook: prediction is already correct");

    Var query;
    {
        NoGradGuard inference;
        query = model.forward_to_layer(x, cb.layer_index() - 1);
    }

    auto make_value = [&]() { return train_value(model, cb, query, y, params, rng); };
    auto label_matches = [&](const CodebookEntry& e, std::size_t label) {
        if (cb.label_check() == LabelCheck::stored) return e.label == label;
        NoGradGuard inference;
        Var value = Tensor::make(e.value->shape, e.value->data);
        Var logits = model.forward_from_layer(value, cb.layer_index());
        return argmax(std::span<const double>(logits->data)) == label;
    };
    return cb.apply_maintenance(std::span<const double>(query->data), y, step, make_value, label_matches);
}

// ---------------------------------------------------------------------------
// serialization and inspection

inline nlohmann::json codebook_to_json(const Codebook& cb) {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < cb.size(); ++i) {
        const CodebookEntry& e = cb.entry(i);
        entries.push_back({
            {"key", e.key},
            {"value", e.value->data},
            {"radius", e.radius},
            {"label", e.label},
            {"created_at", e.created_at},
        });
    }
    return nlohmann::json{
        {"version", 1},
        {"kind", "codebook"},
        {"layer_index", cb.layer_index()},
        {"eps_init", cb.eps_init()},
        {"distance", "euclidean"},
        {"value_init", value_init_name(cb.value_init())},
        {"label_check", label_check_name(cb.label_check())},
        {"key_dim", cb.key_dim()},
        {"value_dim", cb.value_dim()},
        {"edits_applied", cb.edits_applied()},
        {"entries", entries},
    };
}

inline Codebook codebook_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != 1) throw FormatError("codebook file: unsupported version");
        if (j.at("kind").get<std::string>() != "codebook") throw FormatError("codebook file: wrong kind");
        if (j.at("distance").get<std::string>() != "euclidean")
            throw FormatError("codebook file: unsupported distance");
        Codebook cb(j.at("layer_index").get<std::size_t>(), j.at("eps_init").get<double>(),
                    j.at("key_dim").get<std::size_t>(), j.at("value_dim").get<std::size_t>(),
                    value_init_from_name(j.at("value_init").get<std::string>()),
                    label_check_from_name(j.at("label_check").get<std::string>()));
        for (const auto& ej : j.at("entries")) {
            auto key = ej.at("key").get<std::vector<double>>();
            auto value = ej.at("value").get<std::vector<double>>();
            const std::size_t vdim = value.size();
            cb.insert_entry(key, Tensor::make({vdim}, std::move(value), true),
                            ej.at("radius").get<double>(), ej.at("label").get<std::size_t>(),
                            ej.at("created_at").get<std::size_t>());
        }
        cb.set_edits_applied(j.at("edits_applied").get<std::size_t>());
        return cb;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("codebook file: ") + e.what());
    }
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_codebook: cannot open " + path);
    out << codebook_to_json(cb).dump(2) << '\n';
    if (!out) throw IoError("save_codebook: write failed for " + path);
}

inline Codebook load_codebook(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_codebook: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("load_codebook: ") + e.what());
    }
    return codebook_from_json(j);
}

struct InspectReport {
    std::size_t entry_count = 0;
    std::size_t params_per_entry = 0;
    std::size_t param_count = 0;
    std::size_t edits_applied = 0;
    double edits_per_key = 0.0;
    double radius_min = 0.0;
    double radius_mean = 0.0;
    double radius_max = 0.0;
    std::map<std::size_t, std::size_t> label_counts;
    std::size_t overlapping_pairs = 0;  // ball pairs with different labels that intersect
    std::vector<std::string> entry_lines;
};

inline InspectReport inspect_codebook(const Codebook& cb) {
    InspectReport r;
    r.entry_count = cb.size();
    r.params_per_entry = cb.params_per_entry();
    r.param_count = cb.param_count();
    r.edits_applied = cb.edits_applied();
    r.edits_per_key = cb.size() == 0 ? 0.0
                                     : static_cast<double>(cb.edits_applied()) / static_cast<double>(cb.size());
    for (std::size_t i = 0; i < cb.size(); ++i) {
        const CodebookEntry& e = cb.entry(i);
        if (i == 0) r.radius_min = r.radius_max = e.radius;
        r.radius_min = std::min(r.radius_min, e.radius);
        r.radius_max = std::max(r.radius_max, e.radius);
        r.radius_mean += e.radius / static_cast<double>(cb.size());
        ++r.label_counts[e.label];
        std::string line = "entry " + std::to_string(i) + ": radius " + std::to_string(e.radius) + ", label " +
                           std::to_string(e.label) + ", created_at " + std::to_string(e.created_at);
        r.entry_lines.push_back(std::move(line));
        for (std::size_t k = i + 1; k < cb.size(); ++k) {
            const CodebookEntry& o = cb.entry(k);
            if (o.label == e.label) continue;
            double sq = 0.0;
            for (std::size_t d = 0; d < e.key.size(); ++d) {
                const double diff = e.key[d] - o.key[d];
                sq += diff * diff;
            }
            if (std::sqrt(sq) < e.radius + o.radius) ++r.overlapping_pairs;
        }
    }
    return r;
}

inline std::string inspect_to_text(const InspectReport& r) {
    std::string out;
    out += "entries: " + std::to_string(r.entry_count) + "\n";
    out += "params_per_entry: " + std::to_string(r.params_per_entry) + "\n";
    out += "param_count: " + std::to_string(r.param_count) + "\n";
    out += "edits_applied: " + std::to_string(r.edits_applied) + "\n";
    out += "edits_per_key: " + std::to_string(r.edits_per_key) + "\n";
    out += "radius_min: " + format_double(r.radius_min) + "\n";
    out += "radius_mean: " + format_double(r.radius_mean) + "\n";
    out += "radius_max: " + format_double(r.radius_max) + "\n";
    for (const auto& [label, count] : r.label_counts)
        out += "label_" + std::to_string(label) + "_entries: " + std::to_string(count) + "\n";
    out += "overlapping_differing_label_pairs: " + std::to_string(r.overlapping_pairs) + "\n";
    for (const std::string& line : r.entry_lines) out += line + "\n";
    return out;
}

}  // namespace grace
