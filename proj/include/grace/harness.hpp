#pragma once

/**
 * Streaming evaluation loop and the inference-latency benchmark.
 *
 * run_stream walks the edit candidates in order, edits on every wrong
 * prediction, and records per-step metrics:
 *
 *   ES   correctness immediately after an edit (edit rows only)
 *   TRR  accuracy on the fixed test set through the editor's eyes
 *   ERR  accuracy over all previously edited inputs (1.0 before any edit)
 *
 * plus the codebook size, the holdout capture fraction, and per-edit wall
 * time. Rows go to CSV with a stable header so runs are comparable across
 * editors and seeds.
 */

#include <chrono>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "codebook.hpp"
#include "common.hpp"
#include "editors.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

namespace grace {

enum class StreamEvent { skip, edit };

struct MetricsRecord {
    std::size_t step = 0;
    StreamEvent event = StreamEvent::skip;
    int es = -1;  // 1/0 after an edit, -1 (absent) on skip rows
    double trr = 0.0;
    double err = 1.0;
    std::size_t key_count = 0;
    double holdout_capture = 0.0;
    double edit_time_s = 0.0;
};

inline std::vector<MetricsRecord> run_stream(Editor& editor, const EditStream& stream,
                                             const LabeledDataset& test, std::size_t eval_every = 1) {
    if (eval_every == 0) throw ConfigError("run_stream: eval_every must be >= 1");
    if (stream.candidates.size() == 0) throw ArgumentError("run_stream: empty edit stream");

    LabeledDataset edited;
    edited.name = "edited";
    std::vector<MetricsRecord> records;
    // Carried between scheduled evaluations so every row has values.
    double trr = editor.accuracy(test);
    double err = 1.0;

    for (std::size_t t = 0; t < stream.candidates.size(); ++t) {
        const Var& x = stream.candidates.inputs[t];
        const std::size_t y = stream.candidates.labels[t];

        MetricsRecord rec;
        rec.step = t;
        if (editor.predict(x) != y) {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                editor.apply_edit(x, y, t);
            } catch (const std::exception& e) {
                throw Error("run_stream: editor '" + editor.kind() + "' failed at step " + std::to_string(t) +
                            ": " + e.what());
            }
            rec.edit_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rec.event = StreamEvent::edit;
            rec.es = editor.predict(x) == y ? 1 : 0;
            edited.inputs.push_back(x);
            edited.labels.push_back(y);
        }

        if ((t + 1) % eval_every == 0 || t + 1 == stream.candidates.size()) {
            trr = editor.accuracy(test);
            err = edited.size() == 0 ? 1.0 : editor.accuracy(edited);
        }
        rec.trr = trr;
        rec.err = err;
        rec.key_count = editor.key_count();
        rec.holdout_capture = editor.holdout_capture(stream.holdouts.inputs);
        records.push_back(rec);
    }
    return records;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
    if (!out) throw IoError("write_metrics_csv: cannot open " + path);
    out << "step,event,es,trr,err,key_count,holdout_capture,edit_time_s\n";
    for (const MetricsRecord& r : records) {
        out << r.step << ',' << (r.event == StreamEvent::edit ? "edit" : "skip") << ','
            << (r.es < 0 ? std::string() : std::to_string(r.es)) << ',' << format_double(r.trr) << ','
            << format_double(r.err) << ',' << r.key_count << ',' << format_double(r.holdout_capture) << ','
            << format_double(r.edit_time_s) << '\n';
    }
    if (!out) throw IoError("write_metrics_csv: write failed for " + path);
}

inline void write_branch_csv(const std::vector<MaintenanceEvent>& events, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_branch_csv: cannot open " + path);
    out << "step,event_tag,entry_index,d_min,epsilon_after\n";
    for (const MaintenanceEvent& e : events) {
        out << e.step << ',' << event_tag_name(e.tag) << ',' << e.entry_index << ',' << format_double(e.d_min)
            << ',' << format_double(e.epsilon_after) << '\n';
    }
    if (!out) throw IoError("write_branch_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// inference-latency benchmark

struct BenchRow {
    std::size_t size = 0;
    double base_latency_s = 0.0;
    double adapted_latency_s = 0.0;
    double slowdown = 1.0;
};

namespace detail {

// One timed pass of fn() over the input batch; fn returns a checksum so
// the work cannot be optimized away.
template <typename Fn>
inline double batch_seconds(Fn&& fn) {
    static volatile std::size_t sink = 0;
    const auto t0 = std::chrono::steady_clock::now();
    sink = sink + fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace detail

// Times the base model against the adapted model at several codebook sizes.
// Synthetic keys sit far outside the query range, so every lookup scans the
// whole codebook and then defers; that isolates exactly the retrieval
// overhead an edited model pays on unedited inputs.
inline std::vector<BenchRow> bench_inference(const Model& model, std::size_t layer_index,
                                             const std::vector<std::size_t>& sizes,
                                             std::size_t n_inputs = 1000, std::size_t repeats = 5,
                                             std::uint64_t seed = 0) {
    if (layer_index == 0 || layer_index > model.layer_count())
        throw ConfigError("bench_inference: bad layer index");
    if (n_inputs == 0 || repeats == 0) throw ConfigError("bench_inference: need inputs and repeats");

    Rng rng(seed);
    std::vector<Var> inputs;
    inputs.reserve(n_inputs);
    for (std::size_t i = 0; i < n_inputs; ++i) {
        std::vector<double> v(model.input_dim());
        for (double& e : v) e = rng.uniform(-3.0, 3.0);
        inputs.push_back(Tensor::vector(std::move(v)));
    }

    auto run_base = [&]() {
        std::size_t acc = 0;
        for (const Var& x : inputs) acc += model.predict(x);
        return acc;
    };

    for (std::size_t w = 0; w < 2; ++w) run_base();  // warm-up

    std::vector<BenchRow> rows;
    for (std::size_t size : sizes) {
        Codebook cb(layer_index, 0.5, model.activation_dim(layer_index - 1),
                    model.activation_dim(layer_index));
        Var value = Tensor::zeros({cb.value_dim()});
        for (std::size_t i = 0; i < size; ++i) {
            std::vector<double> key(cb.key_dim(), 2000.0);
            key[0] += static_cast<double>(i);  // distinct, far from every query
            cb.insert_entry(key, value, 0.5, 0, i);
        }
        auto run_adapted = [&]() {
            std::size_t acc = 0;
            for (const Var& x : inputs) acc += adapted_predict(model, cb, x);
            return acc;
        };
        run_adapted();  // warm-up
        // Each repeat times base and adapted back to back and the slowdown
        // is the median of those paired ratios, so machine-speed drift and
        // short contention bursts hit both sides of a pair and cancel. The
        // latency columns are medians of their own sides.
        std::vector<double> base_times, adapted_times, ratios;
        for (std::size_t r = 0; r < repeats; ++r) {
            const double tb = detail::batch_seconds(run_base);
            const double ta = detail::batch_seconds(run_adapted);
            base_times.push_back(tb);
            adapted_times.push_back(ta);
            ratios.push_back(ta / tb);
        }
        const double base_s = detail::median(base_times) / static_cast<double>(n_inputs);
        const double adapted_s = detail::median(adapted_times) / static_cast<double>(n_inputs);
        rows.push_back(BenchRow{size, base_s, adapted_s, detail::median(ratios)});
    }
    return rows;
}

inline void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_bench_csv: cannot open " + path);
    out << "size,base_latency_s,latency_s,slowdown\n";
    for (const BenchRow& r : rows) {
        out << r.size << ',' << format_double(r.base_latency_s) << ',' << format_double(r.adapted_latency_s)
            << ',' << format_double(r.slowdown) << '\n';
    }
    if (!out) throw IoError("write_bench_csv: write failed for " + path);
}

}  // namespace grace
