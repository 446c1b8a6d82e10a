/**
 * Command-line driver: trains the base classifier, streams edits through a
 * chosen editor, inspects saved codebooks, and benchmarks lookup latency.
 *
 * Every command takes one JSON config (flags override individual fields),
 * writes its artifacts into the output directory, and copies the config it
 * ran with next to them. Exit codes: 0 success, 2 usage or config problem,
 * 3 runtime failure.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "grace/codebook.hpp"
#include "grace/common.hpp"
#include "grace/config.hpp"
#include "grace/editors.hpp"
#include "grace/harness.hpp"
#include "grace/model.hpp"
#include "grace/svg.hpp"
#include "grace/synthetic.hpp"

namespace {

using namespace grace;
namespace fs = std::filesystem;

Model load_checkpoint(const std::string& path) {
    try {
        return load_model(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

void check_architecture(const Model& m, const RunConfig& cfg) {
    bool ok = m.layer_count() == cfg.widths.size() - 1 && m.input_dim() == cfg.widths.front();
    for (std::size_t l = 1; ok && l <= m.layer_count(); ++l) {
        ok = m.activation_dim(l) == cfg.widths[l] && m.layer(l).activation == cfg.activations[l - 1];
    }
    if (!ok) throw ConfigError("checkpoint architecture does not match the config");
}

void prepare_out_dir(const RunConfig& cfg, const std::string& config_src) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out_dir);
    echo_config(config_src, cfg, cfg.out_dir + "/config.json");
}

void write_holdouts_file(const EditStream& stream, const std::string& path) {
    nlohmann::json inputs = nlohmann::json::array();
    for (const Var& x : stream.holdouts.inputs) inputs.push_back(x->data);
    nlohmann::json j{{"kind", "inputs"}, {"version", 1}, {"inputs", inputs}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

std::vector<Var> load_holdouts_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("holdouts: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("kind").get<std::string>() != "inputs") throw FormatError("holdouts: wrong document kind");
        std::vector<Var> out;
        for (const auto& row : j.at("inputs")) out.push_back(Tensor::vector(row.get<std::vector<double>>()));
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("holdouts: ") + e.what());
    }
}

int cmd_train_base(const RunConfig& cfg, const std::string& config_src) {
    prepare_out_dir(cfg, config_src);
    const SyntheticData data = generate_synthetic(cfg.synth);

    Rng rng(cfg.seed);
    Model model = build_model(cfg, rng);
    const double train_acc = train_base(model, data.train, cfg.train_epochs, cfg.train_lr, rng);
    const double test_acc = model.accuracy(data.test);
    save_model(model, cfg.checkpoint_path());

    nlohmann::json summary{{"kind", "train_summary"},
                           {"version", 1},
                           {"seed", cfg.seed},
                           {"epochs", cfg.train_epochs},
                           {"final_train_accuracy", train_acc},
                           {"test_accuracy", test_acc},
                           {"checkpoint", cfg.checkpoint_path()}};
    std::ofstream out(cfg.out_dir + "/train_summary.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + cfg.out_dir + "/train_summary.json");
    out << summary.dump(2) << '\n';

    std::cout << "checkpoint=" << cfg.checkpoint_path() << " train_accuracy=" << format_double(train_acc)
              << " test_accuracy=" << format_double(test_acc) << '\n';
    return 0;
}

int cmd_run(const RunConfig& cfg, const std::string& config_src) {
    prepare_out_dir(cfg, config_src);
    Model model = load_checkpoint(cfg.checkpoint_path());
    check_architecture(model, cfg);
    const Model base = load_checkpoint(cfg.checkpoint_path());  // pre-edit snapshot for the plot

    const SyntheticData data = generate_synthetic(cfg.synth);
    auto editor = make_editor(cfg, model);
    const std::vector<MetricsRecord> records = run_stream(*editor, data.edits, data.test, cfg.eval_every);

    write_metrics_csv(records, cfg.out_dir + "/metrics.csv");
    write_holdouts_file(data.edits, cfg.out_dir + "/holdouts.json");
    if (auto* ge = dynamic_cast<GraceEditor*>(editor.get())) {
        save_codebook(ge->mutable_codebook(), cfg.out_dir + "/codebook.json");
        write_branch_csv(ge->events(), cfg.out_dir + "/branches.csv");
    }
    if (cfg.svg) {
        auto before = [&](double x, double y) { return base.predict(Tensor::vector({x, y})); };
        auto after = [&](double x, double y) { return editor->predict(Tensor::vector({x, y})); };
        write_decision_svg(cfg.out_dir + "/regions.svg", before, after, data, cfg.synth);
    }

    const MetricsRecord& last = records.back();
    std::cout << "editor=" << editor->kind() << " steps=" << records.size()
              << " trr=" << format_double(last.trr) << " err=" << format_double(last.err)
              << " keys=" << last.key_count << " capture=" << format_double(last.holdout_capture) << '\n';
    return 0;
}

int cmd_inspect(const RunConfig& cfg, const std::string& config_src, const std::string& codebook_path,
                const std::string& holdouts_path) {
    prepare_out_dir(cfg, config_src);
    const Codebook cb = load_codebook(codebook_path);
    const InspectReport report = inspect_codebook(cb);
    std::cout << inspect_to_text(report);

    // Optional per-key holdout captures: queries are layer activations, so
    // mapping raw inputs onto keys needs the model checkpoint.
    std::map<std::size_t, std::size_t> hits;
    bool have_hits = false;
    if (!holdouts_path.empty()) {
        const Model model = load_checkpoint(cfg.checkpoint_path());
        if (cb.key_dim() != model.activation_dim(cb.layer_index() - 1))
            throw ConfigError("inspect: codebook keys do not fit the checkpoint");
        const std::vector<Var> holdouts = load_holdouts_file(holdouts_path);
        NoGradGuard inference;
        for (const Var& x : holdouts) {
            Var q = model.forward_to_layer(x, cb.layer_index() - 1);
            if (auto hit = cb.lookup(q->data)) ++hits[*hit];
        }
        have_hits = true;
    }

    const std::string csv_path = cfg.out_dir + "/inspect.csv";
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + csv_path);
    out << "index,label,radius,created_at,holdout_hits\n";
    for (std::size_t i = 0; i < cb.size(); ++i) {
        const CodebookEntry& e = cb.entry(i);
        out << i << ',' << e.label << ',' << format_double(e.radius) << ',' << e.created_at << ',';
        if (have_hits) out << (hits.count(i) ? hits[i] : 0);
        out << '\n';
    }
    std::cout << "per_key_csv=" << csv_path << '\n';
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& config_src) {
    prepare_out_dir(cfg, config_src);
    const Model model = load_checkpoint(cfg.checkpoint_path());
    check_architecture(model, cfg);

    const std::vector<BenchRow> rows =
        bench_inference(model, cfg.bench_layer, cfg.bench_sizes, cfg.bench_inputs, cfg.bench_repeats, cfg.seed);
    write_bench_csv(rows, cfg.out_dir + "/bench.csv");
    for (const BenchRow& r : rows) {
        std::cout << "size=" << r.size << " base_s=" << format_double(r.base_latency_s)
                  << " adapted_s=" << format_double(r.adapted_latency_s)
                  << " slowdown=" << format_double(r.slowdown) << '\n';
    }
    return 0;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
    std::vector<std::size_t> sizes;
    std::string token;
    std::istringstream in(csv);
    while (std::getline(in, token, ',')) {
        try {
            sizes.push_back(static_cast<std::size_t>(std::stoull(token)));
        } catch (const std::exception&) {
            throw ConfigError("--sizes: '" + token + "' is not a non-negative integer");
        }
    }
    if (sizes.empty()) throw ConfigError("--sizes: empty list");
    return sizes;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"codebook model editing toolkit"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, editor_name, out_dir, sizes_csv, codebook_path, holdouts_path;
    double eps_init = 0.0;
    std::int64_t layer = 0, seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "override the run seed");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--checkpoint", checkpoint, "model checkpoint path");
        return cmd;
    };

    CLI::App* train = add_common(app.add_subcommand("train-base", "train and save the base classifier"));
    CLI::App* run = add_common(app.add_subcommand("run", "stream edits through an editor"));
    run->add_option("--editor", editor_name, "grace, ft, ft_ewc, ft_retrain, defer, memory");
    run->add_option("--eps-init", eps_init, "initial deferral radius");
    run->add_option("--layer", layer, "edited layer index (1-based)");
    CLI::App* inspect = add_common(app.add_subcommand("inspect", "report on a saved codebook"));
    inspect->add_option("codebook", codebook_path, "codebook JSON file")->required();
    inspect->add_option("holdouts", holdouts_path, "holdout inputs JSON file");
    CLI::App* bench = add_common(app.add_subcommand("bench", "measure lookup latency by codebook size"));
    bench->add_option("--sizes", sizes_csv, "comma-separated codebook sizes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        auto counted = [&](const char* flag) {
            return train->count(flag) || run->count(flag) || inspect->count(flag) || bench->count(flag);
        };
        if (counted("--seed")) {
            cfg.seed = static_cast<std::uint64_t>(seed);
            cfg.synth.seed = cfg.seed;
        }
        if (counted("--out")) cfg.out_dir = out_dir;
        if (counted("--checkpoint")) cfg.checkpoint = checkpoint;
        if (run->count("--editor")) cfg.editor = editor_name;
        if (run->count("--eps-init")) cfg.eps_init = eps_init;
        if (run->count("--layer")) {
            if (layer <= 0) throw ConfigError("--layer must be >= 1");
            cfg.layer = static_cast<std::size_t>(layer);
        }
        if (bench->count("--sizes")) cfg.bench_sizes = parse_sizes(sizes_csv);
        validate_config(cfg);

        if (train->parsed()) return cmd_train_base(cfg, config_path);
        if (run->parsed()) return cmd_run(cfg, config_path);
        if (inspect->parsed()) return cmd_inspect(cfg, config_path, codebook_path, holdouts_path);
        if (bench->parsed()) return cmd_bench(cfg, config_path);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
