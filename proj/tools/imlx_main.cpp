// imlx command line: synthetic corpora, preprocessing, patient-grouped splits,
// ensemble training, prediction, aggregation, evaluation and heatmap reports.
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "imlx/pipeline.hpp"
#include "imlx/runconfig.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out;
    std::string view;
    long support_threshold = -1;
    unsigned long long seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_option("--view", args.view, "label view: specific | general")
        ->check(CLI::IsMember({"specific", "general"}));
    cmd->add_option("--threshold", args.support_threshold, "label support threshold");
    cmd->add_option("--seed", args.seed, "master seed")->each([&args](const std::string&) {
        args.seed_set = true;
    });
}

imlx::runconfig::RunConfig build_config(const CommonArgs& args) {
    std::map<std::string, std::string> kv;
    if (!args.config_path.empty())
        kv = imlx::runconfig::parse_config_file(args.config_path);
    auto cfg = imlx::runconfig::RunConfig::from_map(kv);
    if (!args.out.empty()) cfg.out = args.out;
    if (!args.view.empty())
        cfg.view = args.view == "general" ? imlx::taxonomy::ViewKind::general
                                          : imlx::taxonomy::ViewKind::specific;
    if (args.support_threshold >= 1) cfg.support_threshold = args.support_threshold;
    if (args.seed_set) {
        cfg.seed = args.seed;
        cfg.seed_set = true;
    }
    if (!cfg.seed_set)
        throw std::runtime_error("a seed is required (--seed or `seed =` in the config)");
    if (cfg.out.empty()) throw std::runtime_error("an output directory is required (--out)");
    return cfg;
}

void require_taxonomy(const imlx::runconfig::RunConfig& cfg) {
    if (cfg.taxonomy.empty())
        throw std::runtime_error("a taxonomy file is required (--taxonomy or paths.taxonomy)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"imlx: imbalanced multilabel x-ray classification pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string manifest, taxonomy, checkpoints, predictions, ensembles, subset = "test";
    int count = -1, side = -1, patients = -1, limit = -1;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth, common);
    synth->add_option("--count", count, "number of images");
    synth->add_option("--side", side, "image side in pixels");
    synth->add_option("--patients", patients, "number of distinct patients");

    auto* preprocess = app.add_subcommand("preprocess", "masks to cropped model inputs");
    add_common(preprocess, common);
    preprocess->add_option("--manifest", manifest, "input manifest CSV")->required();

    auto* split = app.add_subcommand("split", "patient-grouped stratified split");
    add_common(split, common);
    split->add_option("--manifest", manifest, "input manifest CSV")->required();
    split->add_option("--taxonomy", taxonomy, "term tree file");

    auto* train = app.add_subcommand("train", "train the 5-member ensemble");
    add_common(train, common);
    train->add_option("--manifest", manifest, "manifest with split column")->required();
    train->add_option("--taxonomy", taxonomy, "term tree file");

    auto* predict = app.add_subcommand("predict", "per-member probability matrices");
    add_common(predict, common);
    predict->add_option("--manifest", manifest, "manifest with split column")->required();
    predict->add_option("--checkpoints", checkpoints, "checkpoint directory")->required();
    predict->add_option("--subset", subset, "split subset to score (default test)");

    auto* aggregate = app.add_subcommand("ensemble", "aggregate member matrices");
    add_common(aggregate, common);
    aggregate->add_option("--predictions", predictions, "member CSV directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "result tables and hamming loss");
    add_common(evaluate, common);
    evaluate->add_option("--manifest", manifest, "manifest with split column")->required();
    evaluate->add_option("--taxonomy", taxonomy, "term tree file");
    evaluate->add_option("--predictions", predictions, "member CSV directory")->required();
    evaluate->add_option("--ensembles", ensembles, "ensemble CSV directory")->required();
    evaluate->add_option("--subset", subset, "split subset to score (default test)");

    auto* explain = app.add_subcommand("explain", "heatmap reports for test samples");
    add_common(explain, common);
    explain->add_option("--manifest", manifest, "manifest with split column")->required();
    explain->add_option("--checkpoints", checkpoints, "checkpoint directory")->required();
    explain->add_option("--ensembles", ensembles, "ensemble CSV directory")->required();
    explain->add_option("--limit", limit, "max samples to report (default from config)");

    auto* pipeline = app.add_subcommand("pipeline", "run every stage under one output root");
    add_common(pipeline, common);
    pipeline->add_option("--manifest", manifest, "existing manifest (otherwise synth runs)");
    pipeline->add_option("--taxonomy", taxonomy, "term tree file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        auto cfg = build_config(common);
        if (!manifest.empty()) cfg.manifest = manifest;
        if (!taxonomy.empty()) cfg.taxonomy = taxonomy;
        if (count > 0) cfg.synth.count = count;
        if (side > 0) cfg.synth.image_side = side;
        if (patients > 0) cfg.synth.patient_count = patients;
        if (limit > 0) cfg.explain_limit = limit;
        const int threads = imlx::runconfig::thread_cap();

        if (synth->parsed()) {
            imlx::pipeline::stage_synth(cfg, cfg.out);
            imlx::pipeline::write_run_record(cfg, cfg.out, "synth");
        } else if (preprocess->parsed()) {
            imlx::pipeline::stage_preprocess(cfg, cfg.manifest, cfg.out);
            imlx::pipeline::write_run_record(cfg, cfg.out, "preprocess");
        } else if (split->parsed()) {
            require_taxonomy(cfg);
            imlx::pipeline::stage_split(cfg, cfg.manifest, cfg.out / "manifest.csv");
            imlx::pipeline::write_run_record(cfg, cfg.out, "split");
        } else if (train->parsed()) {
            require_taxonomy(cfg);
            imlx::pipeline::stage_train(cfg, cfg.manifest, cfg.out, threads);
            imlx::pipeline::write_run_record(cfg, cfg.out, "train");
        } else if (predict->parsed()) {
            imlx::pipeline::stage_predict(cfg, cfg.manifest, checkpoints, cfg.out, subset);
            imlx::pipeline::write_run_record(cfg, cfg.out, "predict");
        } else if (aggregate->parsed()) {
            imlx::pipeline::stage_ensemble(cfg, predictions, cfg.out);
            imlx::pipeline::write_run_record(cfg, cfg.out, "ensemble");
        } else if (evaluate->parsed()) {
            require_taxonomy(cfg);
            imlx::pipeline::stage_evaluate(cfg, cfg.manifest, predictions, ensembles, cfg.out,
                                           subset);
            imlx::pipeline::write_run_record(cfg, cfg.out, "evaluate");
        } else if (explain->parsed()) {
            imlx::pipeline::stage_explain(cfg, cfg.manifest, checkpoints, ensembles, cfg.out,
                                          cfg.explain_limit);
            imlx::pipeline::write_run_record(cfg, cfg.out, "explain");
        } else if (pipeline->parsed()) {
            imlx::pipeline::run_pipeline(cfg, threads);
            imlx::pipeline::write_run_record(cfg, cfg.out, "pipeline");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
