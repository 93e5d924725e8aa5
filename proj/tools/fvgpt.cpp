// fvgpt: synthesise data, train, evaluate, check gradients, sweep ablations.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fvg/dataio.hpp"
#include "fvg/errors.hpp"
#include "fvg/gradsuite.hpp"
#include "fvg/report.hpp"
#include "fvg/trainer.hpp"

namespace fs = std::filesystem;
using namespace fvg;

namespace {

struct SynthOpts {
    SynthParams params;
    std::string out;
};

struct TrainOpts {
    std::string data;
    std::string out = "run";
    TrainConfig config;
    std::string frg_indicators = "111";
    std::string brg_indicators = "111";
    std::string schedule = "constant";
    std::vector<std::string> ablations;
    bool base_only = false;
    bool pc_only = false;
    bool record_time = false;
};

struct EvalOpts {
    std::string data;
    std::string checkpoint;
    std::string branch = "both";
    std::string split = "test";
    std::string report;
};

struct GradOpts {
    GradSuiteOptions suite;
};

struct SweepOpts {
    TrainOpts base;
    std::vector<std::string> rows;
};

Dataset load_data(const std::string& dir) {
    ReadResult r = read_dataset(dir);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    return std::move(r.data);
}

TrainConfig resolved_config(const TrainOpts& o) {
    TrainConfig c = o.config;
    c.frg_mask = IndicatorMask::parse(o.frg_indicators);
    c.brg_mask = IndicatorMask::parse(o.brg_indicators);
    if (o.schedule == "cosine") {
        c.schedule = LrSchedule::cosine;
    } else if (o.schedule != "constant") {
        throw ConfigError("unknown --lr-schedule '" + o.schedule + "'");
    }
    for (const auto& a : o.ablations) apply_ablation(c, a);
    c.validate();
    return c;
}

void add_train_flags(CLI::App* cmd, TrainOpts& o) {
    cmd->add_option("--data", o.data, "Dataset directory")->required();
    cmd->add_option("--seed", o.config.seed, "Seed for initialisation and shuffling")->capture_default_str();
    cmd->add_option("--epochs", o.config.epochs, "Training epochs per branch")->capture_default_str();
    cmd->add_option("--lr", o.config.lr, "SGD learning rate")->capture_default_str();
    cmd->add_option("--batch", o.config.batch, "Batch size")->capture_default_str();
    cmd->add_option("--tau-d", o.config.tau_d, "Distillation temperature tau_d")->capture_default_str();
    cmd->add_option("--lambda-d", o.config.lambda_d, "Distillation loss weight lambda_d")->capture_default_str();
    cmd->add_option("--dim-fdc", o.config.dim_fdc, "Adapter bottleneck width (halved dim if >= feature dim)")
        ->capture_default_str();
    cmd->add_option("--dim-rg", o.config.dim_rg, "Reliability gate hidden width")->capture_default_str();
    cmd->add_option("--gate-layers", o.config.gate_layers, "Reliability gate depth (1, 2 or 3)")
        ->capture_default_str();
    cmd->add_option("--logit-scale", o.config.logit_scale, "Cosine logit scale")->capture_default_str();
    cmd->add_option("--frg-indicators", o.frg_indicators, "FRG indicator mask over [dH, cos, area]")
        ->capture_default_str();
    cmd->add_option("--brg-indicators", o.brg_indicators, "BRG indicator mask over [H_full, H_clip, cos]")
        ->capture_default_str();
    cmd->add_option("--lr-schedule", o.schedule, "constant or cosine")->capture_default_str();
    std::string names;
    for (const auto& n : ablation_names()) names += (names.empty() ? "" : ", ") + n;
    cmd->add_option("--ablate", o.ablations, "Ablation(s): " + names);
}

int cmd_synth(const SynthOpts& o) {
    const Dataset d = synth_generate(o.params);
    write_dataset(d, o.out);
    std::cout << nlohmann::json{{"kind", "synth"},
                                {"out", o.out},
                                {"records", d.records.size()},
                                {"train", d.train_count},
                                {"dim", d.dim()},
                                {"classes", d.banks.names.size()}}
                     .dump()
              << '\n';
    return 0;
}

RunReport train_one(const Dataset& data, const TrainConfig& config, bool base_only, bool pc_only,
                    const fs::path& out, bool record_time) {
    const auto t0 = std::chrono::steady_clock::now();
    Checkpoint ckpt = Checkpoint::initial(config, data.dim());
    std::vector<EpochRecord> history;
    try {
        if (!pc_only) {
            auto h = train_base(data, ckpt);
            history.insert(history.end(), h.begin(), h.end());
        }
        if (!base_only) {
            auto h = train_pc(data, ckpt);
            history.insert(history.end(), h.begin(), h.end());
        }
    } catch (const TrainingDiverged& e) {
        save_checkpoint(e.last_good(), out / "last_good");
        throw;
    }
    save_checkpoint(ckpt, out / "checkpoint");
    write_history(history, out / "history.jsonl");

    RunReport report;
    report.config = config;
    report.bottleneck = ckpt.bottleneck;
    report.params = param_counts(ckpt);
    report.history = history;
    report.base = evaluate(data, ckpt, Branch::base);
    report.novel = evaluate(data, ckpt, Branch::novel);
    if (record_time) {
        report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    write_report(report, out / "report.jsonl");
    return report;
}

int cmd_train(const TrainOpts& o) {
    if (o.base_only && o.pc_only) throw ConfigError("--base-only and --pc-only are mutually exclusive");
    const TrainConfig config = resolved_config(o);
    const Dataset data = load_data(o.data);
    const RunReport r = train_one(data, config, o.base_only, o.pc_only, o.out, o.record_time);
    std::cout << r.to_string();
    return 0;
}

int cmd_eval(const EvalOpts& o) {
    const Dataset data = load_data(o.data);
    LoadParts parts;
    if (o.branch == "base") {
        parts = {true, false};
    } else if (o.branch == "new") {
        parts = {false, true};
    } else if (o.branch != "both") {
        throw ConfigError("unknown --branch '" + o.branch + "' (expected base, new or both)");
    }
    const LoadedCheckpoint loaded = load_checkpoint(o.checkpoint, parts);
    for (const auto& b : loaded.blocks_read) std::cerr << "load block " << b << '\n';

    std::span<const SampleRecord> records;
    if (o.split == "test") {
        records = data.test();
    } else if (o.split == "train") {
        records = data.train();
    } else {
        throw ConfigError("unknown --split '" + o.split + "' (expected test or train)");
    }

    RunReport report;
    report.config = loaded.ckpt.config;
    report.bottleneck = loaded.ckpt.bottleneck;
    report.params = param_counts(loaded.ckpt);
    if (parts.base) report.base = evaluate_records(data, loaded.ckpt, Branch::base, records);
    if (parts.novel) report.novel = evaluate_records(data, loaded.ckpt, Branch::novel, records);
    if (!o.report.empty()) write_report(report, o.report);
    std::cout << report.to_string();
    return 0;
}

int cmd_gradcheck(const GradOpts& o) {
    const auto results = run_gradient_suite(o.suite);
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.pass;
        std::cout << nlohmann::json{{"kind", "gradcheck"},
                                    {"term", r.term},
                                    {"max_rel_error", r.max_rel_error},
                                    {"worst_param", r.worst_param},
                                    {"tolerance", o.suite.tolerance},
                                    {"pass", r.pass}}
                         .dump()
                  << '\n';
    }
    return ok ? 0 : 1;
}

int cmd_sweep(const SweepOpts& o) {
    const Dataset data = load_data(o.base.data);
    for (const auto& row : o.rows) {
        TrainOpts t = o.base;
        if (row != "full") t.ablations.push_back(row);
        const TrainConfig config = resolved_config(t);
        const RunReport r = train_one(data, config, false, false, fs::path(o.base.out) / row, false);
        nlohmann::json line{{"kind", "sweep"},
                            {"row", row},
                            {"base_accuracy", r.base->accuracy},
                            {"new_accuracy", r.novel->accuracy},
                            {"hm", *r.hm()},
                            {"base_mean_dfg", r.base->mean_dfg}};
        std::cout << line.dump() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Foreground-gated adapters and prior calibration over pre-extracted embeddings"};
    app.require_subcommand(1);

    SynthOpts synth;
    auto* s = app.add_subcommand("synth", "Write a seeded synthetic dataset");
    s->add_option("--seed", synth.params.seed, "Generator seed")->capture_default_str();
    s->add_option("--classes", synth.params.classes, "Class count (>= 2)")->capture_default_str();
    s->add_option("--dim", synth.params.dim, "Feature dimension")->capture_default_str();
    s->add_option("--shots", synth.params.shots, "Training shots per base class")->capture_default_str();
    s->add_option("--fg-advantage", synth.params.fg_advantage, "Background strength in full-image features")
        ->capture_default_str();
    s->add_option("--noise", synth.params.noise, "Per-coordinate feature noise")->capture_default_str();
    s->add_option("--test-per-class", synth.params.test_per_class, "Test records per class")->capture_default_str();
    s->add_option("--out", synth.out, "Output directory")->required();

    TrainOpts train;
    auto* t = app.add_subcommand("train", "Train both branches; writes checkpoint/, history.jsonl, report.jsonl");
    add_train_flags(t, train);
    t->add_option("--out", train.out, "Run directory")->capture_default_str();
    t->add_flag("--base-only", train.base_only, "Train the base branch only");
    t->add_flag("--pc-only", train.pc_only, "Train the new-branch calibration only");
    t->add_flag("--record-time", train.record_time, "Add wall time to the report (not reproducible)");

    EvalOpts ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    e->add_option("--branch", ev.branch, "base, new or both")->capture_default_str();
    e->add_option("--split", ev.split, "test or train")->capture_default_str();
    e->add_option("--report", ev.report, "Also write the report to this file");

    GradOpts grad;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
    g->add_option("--seed", grad.suite.seed, "Instance seed")->capture_default_str();
    g->add_option("--classes", grad.suite.classes, "Classes per instance")->capture_default_str();
    g->add_option("--dim", grad.suite.dim, "Feature dimension")->capture_default_str();
    g->add_option("--tolerance", grad.suite.tolerance, "Max relative error")->capture_default_str();
    g->add_flag("--inject-wrong-sign", grad.suite.inject_wrong_sign)->group("");

    SweepOpts sweep;
    auto* w = app.add_subcommand("sweep", "Train the full config and each ablation; one line per row");
    add_train_flags(w, sweep.base);
    w->add_option("--out", sweep.base.out, "Root directory for per-row runs")->capture_default_str();
    sweep.rows = {"full", "no-frg-loss", "no-fdc-ce", "no-fdc-dist", "no-pc-ce", "no-pc-kl", "no-pc", "no-fdc"};
    w->add_option("--rows", sweep.rows, "Rows to run ('full' or ablation names)")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (s->parsed()) return cmd_synth(synth);
        if (t->parsed()) return cmd_train(train);
        if (e->parsed()) return cmd_eval(ev);
        if (g->parsed()) return cmd_gradcheck(grad);
        if (w->parsed()) return cmd_sweep(sweep);
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 3;
    }
    return 0;
}
