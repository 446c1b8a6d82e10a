#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <grace/harness.hpp>
#include <grace/synthetic.hpp>

using namespace grace;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool inside_flip_disk(const Var& p, const SyntheticSpec& spec) {
    const double dx = p->data[0] - spec.flip_center[0];
    const double dy = p->data[1] - spec.flip_center[1];
    return dx * dx + dy * dy <= spec.flip_radius * spec.flip_radius;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and well-formed") {
    SyntheticSpec spec;
    SyntheticData a = generate_synthetic(spec);
    SyntheticData b = generate_synthetic(spec);

    CHECK(a.train.size() == 200);
    CHECK(a.edits.candidates.size() == 20);
    CHECK(a.edits.holdouts.size() == 50);
    CHECK(a.test.size() == 400);

    for (std::size_t i = 0; i < a.train.size(); ++i) REQUIRE(a.train.inputs[i]->data == b.train.inputs[i]->data);
    for (std::size_t i = 0; i < a.test.size(); ++i) REQUIRE(a.test.labels[i] == b.test.labels[i]);
    for (std::size_t i = 0; i < a.edits.candidates.size(); ++i)
        REQUIRE(a.edits.candidates.inputs[i]->data == b.edits.candidates.inputs[i]->data);
}

TEST_CASE("flip region sits inside one class and labels are flipped") {
    SyntheticSpec spec;
    SyntheticData d = generate_synthetic(spec);

    for (std::size_t i = 0; i < d.edits.candidates.size(); ++i) {
        REQUIRE(inside_flip_disk(d.edits.candidates.inputs[i], spec));
        REQUIRE(d.edits.original_labels[i] == d.edits.original_labels[0]);
        REQUIRE(d.edits.candidates.labels[i] == 1 - d.edits.original_labels[i]);
    }
    // The default disk sits in class 1's support.
    CHECK(d.edits.original_labels[0] == 1);
    for (const Var& h : d.edits.holdouts.inputs) REQUIRE(inside_flip_disk(h, spec));
    for (const Var& t : d.test.inputs) REQUIRE_FALSE(inside_flip_disk(t, spec));
}

TEST_CASE("degenerate synthetic specs are rejected") {
    SyntheticSpec spec;
    spec.flip_radius = 0.0;
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.flip_radius = 0.5;
    spec.sigma = 0.0;
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.sigma = 0.7;
    spec.flip_center = {50.0, 50.0};  // no mixture mass lands here
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("run_stream on an already-correct stream records no edits") {
    Rng mrng(3);
    Model m({2, 8, 2}, {Activation::relu, Activation::identity}, mrng);
    LabeledDataset data;
    Rng drng(5);
    for (int i = 0; i < 30; ++i) {
        const std::size_t label = drng.below(2);
        const double c = label == 0 ? -1.5 : 1.5;
        data.inputs.push_back(Tensor::vector({drng.normal(c, 0.3), drng.normal(c, 0.3)}));
        data.labels.push_back(label);
    }
    Rng trng(7);
    REQUIRE(train_base(m, data, 60, 0.05, trng) == 1.0);

    // Stream the training points themselves: the model is right on all.
    EditStream stream;
    stream.candidates = data;
    GraceEditor ed(m, 2, 0.5, ValueTrainParams{}, 11);
    auto records = run_stream(ed, stream, data, 1);

    REQUIRE(records.size() == data.size());
    for (const auto& r : records) {
        CHECK(r.event == StreamEvent::skip);
        CHECK(r.es == -1);
        CHECK(r.err == 1.0);  // no prior edits: vacuous retention
        CHECK(r.trr == 1.0);
        CHECK(r.key_count == 0);
        CHECK(r.edit_time_s == 0.0);
    }

    CHECK_THROWS_AS(run_stream(ed, stream, data, 0), ConfigError);
    EditStream empty;
    CHECK_THROWS_AS(run_stream(ed, empty, data, 1), ArgumentError);
}

TEST_CASE("run_stream records edits with metrics in range") {
    Rng mrng(9);
    Model m({2, 8, 2}, {Activation::relu, Activation::identity}, mrng);
    LabeledDataset train;
    Rng drng(11);
    for (int i = 0; i < 30; ++i) {
        const std::size_t label = drng.below(2);
        const double c = label == 0 ? -1.5 : 1.5;
        train.inputs.push_back(Tensor::vector({drng.normal(c, 0.3), drng.normal(c, 0.3)}));
        train.labels.push_back(label);
    }
    Rng trng(13);
    train_base(m, train, 60, 0.05, trng);

    // Candidates near the class-1 center with flipped labels force edits.
    EditStream stream;
    stream.candidates.name = "edits";
    for (int i = 0; i < 6; ++i) {
        stream.candidates.inputs.push_back(Tensor::vector({drng.normal(1.5, 0.1), drng.normal(1.5, 0.1)}));
        stream.candidates.labels.push_back(0);
    }
    stream.holdouts.inputs.push_back(stream.candidates.inputs[0]);
    stream.holdouts.labels.push_back(0);

    GraceEditor ed(m, 2, 0.5, ValueTrainParams{}, 17);
    auto records = run_stream(ed, stream, train, 1);

    REQUIRE(records.size() == 6);
    std::size_t prev_keys = 0;
    bool any_edit = false;
    for (const auto& r : records) {
        CHECK(r.trr >= 0.0);
        CHECK(r.trr <= 1.0);
        CHECK(r.err >= 0.0);
        CHECK(r.err <= 1.0);
        CHECK(r.holdout_capture >= 0.0);
        CHECK(r.holdout_capture <= 1.0);
        CHECK(r.key_count >= prev_keys);  // codebook only grows
        prev_keys = r.key_count;
        if (r.event == StreamEvent::edit) {
            any_edit = true;
            CHECK(r.es == 1);
            CHECK(r.edit_time_s >= 0.0);
        }
    }
    CHECK(any_edit);
    CHECK(records.back().err == 1.0);
}

TEST_CASE("metrics CSV has the exact contract shape") {
    std::vector<MetricsRecord> records;
    MetricsRecord skip;
    skip.step = 0;
    skip.trr = 0.5;
    skip.err = 1.0;
    records.push_back(skip);
    MetricsRecord edit;
    edit.step = 1;
    edit.event = StreamEvent::edit;
    edit.es = 1;
    edit.trr = 0.75;
    edit.err = 1.0;
    edit.key_count = 2;
    edit.holdout_capture = 0.25;
    edit.edit_time_s = 0.125;
    records.push_back(edit);

    const std::string path = "test_metrics.csv";
    write_metrics_csv(records, path);
    CHECK(slurp(path) ==
          "step,event,es,trr,err,key_count,holdout_capture,edit_time_s\n"
          "0,skip,,0.5,1,0,0,0\n"
          "1,edit,1,0.75,1,2,0.25,0.125\n");
    std::remove(path.c_str());
}

TEST_CASE("branch CSV writes nan for an undefined distance") {
    std::vector<MaintenanceEvent> events;
    events.push_back(MaintenanceEvent{EventTag::added, 0, std::nan(""), 0.5, 0});
    events.push_back(MaintenanceEvent{EventTag::split, 1, 0.8, 0.4, 3});

    const std::string path = "test_branch.csv";
    write_branch_csv(events, path);
    CHECK(slurp(path) ==
          "step,event_tag,entry_index,d_min,epsilon_after\n"
          "0,added,0,nan,0.5\n"
          "3,split,1,0.8,0.4\n");
    std::remove(path.c_str());
}

TEST_CASE("bench_inference reports one row per size") {
    Rng rng(19);
    Model m({2, 16, 8, 2}, {Activation::relu, Activation::relu, Activation::identity}, rng);
    auto rows = bench_inference(m, 1, {0, 10, 50}, 40, 3, 5);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].size == 0);
    CHECK(rows[1].size == 10);
    CHECK(rows[2].size == 50);
    for (const auto& r : rows) {
        CHECK(r.base_latency_s > 0.0);
        CHECK(r.adapted_latency_s > 0.0);
        // The slowdown column is a median of paired ratios, which tracks
        // the ratio of the median latencies without equaling it exactly.
        CHECK(r.slowdown > 0.0);
        CHECK(r.slowdown == doctest::Approx(r.adapted_latency_s / r.base_latency_s).epsilon(0.5));
    }

    CHECK_THROWS_AS(bench_inference(m, 0, {1}, 10, 1, 0), ConfigError);
    CHECK_THROWS_AS(bench_inference(m, 9, {1}, 10, 1, 0), ConfigError);

    const std::string path = "test_bench.csv";
    write_bench_csv(rows, path);
    std::string text = slurp(path);
    CHECK(text.substr(0, text.find('\n')) == "size,base_latency_s,latency_s,slowdown");
    std::remove(path.c_str());
}
