#include "imlx/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "imlx/ensemble.hpp"
#include "imlx/explain.hpp"
#include "imlx/image_io.hpp"
#include "imlx/metrics.hpp"
#include "imlx/preprocess.hpp"

namespace imlx::pipeline {

using json = nlohmann::ordered_json;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return p;
    return base / p;
}

StagePaths StagePaths::under(const std::filesystem::path& out) {
    StagePaths s;
    s.synth_dir = out / "synth";
    s.preproc_dir = out / "preproc";
    s.split_manifest = out / "split" / "manifest.csv";
    s.train_dir = out / "train";
    s.predict_dir = out / "predict";
    s.ensemble_dir = out / "ensemble";
    s.eval_dir = out / "eval";
    s.explain_dir = out / "explain";
    return s;
}

std::filesystem::path stage_synth(const runconfig::RunConfig& cfg,
                                  const std::filesystem::path& out_dir) {
    dataset::SynthConfig synth = cfg.synth;
    synth.seed = cfg.seed;
    const auto result = dataset::synth_generate(synth, out_dir);
    return result.manifest_path;
}

namespace {

std::string file_stem_from_rel(const std::string& rel) {
    return std::filesystem::path(rel).stem().string();
}

struct LabelProblem {
    taxonomy::LabelView view;                 // retained labels
    std::vector<SampleRecord> records;        // pruned manifest
    nn::LossConfig weights = nn::LossConfig::uniform(1);
};

LabelProblem build_problem(const runconfig::RunConfig& cfg,
                           const std::vector<SampleRecord>& records) {
    const auto tree = taxonomy::parse_term_tree(read_file(cfg.taxonomy));
    const auto full_view = taxonomy::build_view(tree, cfg.view);
    auto filtered = taxonomy::filter_by_support(records, full_view, cfg.support_threshold);
    if (filtered.view.label_count() == 0)
        throw std::runtime_error("no label reaches the support threshold " +
                                 std::to_string(cfg.support_threshold));
    LabelProblem problem;
    problem.view = std::move(filtered.view);
    problem.records = std::move(filtered.records);
    problem.weights = taxonomy::label_weights(filtered.stats);
    return problem;
}

Image load_input_image(const std::filesystem::path& path, int expected_side) {
    const Raster raster = read_pnm(path);
    if (raster.channels != 1)
        throw std::runtime_error("expected single-channel image: " + path.string());
    Image img(raster.height, raster.width);
    img.pixels = raster.data;
    if (img.height != expected_side || img.width != expected_side)
        throw std::runtime_error("image " + path.string() + " is " + std::to_string(img.height) +
                                 "x" + std::to_string(img.width) + ", expected side " +
                                 std::to_string(expected_side) + "; run preprocess first");
    return img;
}

std::vector<std::filesystem::path> checkpoint_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::exists(dir))
        throw std::runtime_error("checkpoint directory missing: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".imlx") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .imlx checkpoints in " + dir.string());
    return files;
}

} // namespace

std::filesystem::path stage_preprocess(const runconfig::RunConfig& cfg,
                                       const std::filesystem::path& manifest,
                                       const std::filesystem::path& out_dir) {
    const auto records = dataset::load_manifest(manifest);
    const auto base = manifest.parent_path();
    std::filesystem::create_directories(out_dir / "images");

    std::vector<SampleRecord> out_records;
    std::string crops_csv = "image_path,orig_h,orig_w,work_side,r0,c0,r1,c1,out_side,mask_warning\n";

    for (const auto& rec : records) {
        const Raster raster = read_pnm(resolve(base, rec.image_path));
        Image work = preprocess::standardize(raster, cfg.work_side);

        CropBox box{0, 0, cfg.work_side - 1, cfg.work_side - 1};
        bool warn = false;
        Image cropped = work;
        if (!rec.mask_path.empty()) {
            Mask mask = read_mask_pgm(resolve(base, rec.mask_path));
            mask = preprocess::resize_mask_nearest(mask, cfg.work_side, cfg.work_side);
            auto post = preprocess::postprocess_mask(mask, cfg.mask_min_area_fraction);
            auto crop = preprocess::crop_to_roi(work, post.mask, cfg.crop_margin_fraction);
            box = crop.box;
            warn = post.warning || crop.warning;
            cropped = std::move(crop.image);
        } else {
            warn = true; // no mask: full frame
        }
        const Image final_img = preprocess::resize(cropped, cfg.train.input_side);

        const std::string stem = file_stem_from_rel(rec.image_path);
        const std::string rel = "images/" + stem + ".pgm";
        write_pgm(out_dir / rel, final_img, 65535);

        SampleRecord out = rec;
        out.image_path = rel;
        out.mask_path.clear();
        out_records.push_back(std::move(out));

        crops_csv += rel + "," + std::to_string(raster.height) + "," + std::to_string(raster.width) +
                     "," + std::to_string(cfg.work_side) + "," + std::to_string(box.r0) + "," +
                     std::to_string(box.c0) + "," + std::to_string(box.r1) + "," +
                     std::to_string(box.c1) + "," + std::to_string(cfg.train.input_side) + "," +
                     (warn ? "1" : "0") + "\n";
    }

    const auto out_manifest = out_dir / "manifest.csv";
    dataset::write_manifest(out_manifest, out_records);
    atomic_write(out_dir / "crops.csv", crops_csv);
    return out_manifest;
}

std::filesystem::path stage_split(const runconfig::RunConfig& cfg,
                                  const std::filesystem::path& manifest,
                                  const std::filesystem::path& out_manifest) {
    const auto records = dataset::load_manifest(manifest);
    const auto tree = taxonomy::parse_term_tree(read_file(cfg.taxonomy));
    const auto full_view = taxonomy::build_view(tree, cfg.view);
    auto filtered = taxonomy::filter_by_support(records, full_view, cfg.support_threshold);
    const auto split = dataset::stratified_group_split(filtered.records, filtered.view,
                                                       cfg.split_fractions, cfg.seed);
    dataset::apply_split(filtered.records, split);

    // rebase entries so they stay relative to the manifest that carries them
    const auto in_base = manifest.parent_path().lexically_normal();
    const auto out_base = out_manifest.parent_path().lexically_normal();
    for (auto& rec : filtered.records) {
        auto rebase = [&](std::string& rel) {
            if (rel.empty() || std::filesystem::path(rel).is_absolute()) return;
            const auto target = (in_base / rel).lexically_normal();
            const auto relative = target.lexically_relative(out_base);
            rel = relative.empty() ? target.string() : relative.string();
        };
        rebase(rec.image_path);
        rebase(rec.mask_path);
    }
    dataset::write_manifest(out_manifest, filtered.records);
    return out_manifest;
}

namespace {

trainer::DataSet collect_subset(const std::vector<SampleRecord>& records,
                                const std::filesystem::path& base,
                                const taxonomy::LabelView& view, const std::string& subset,
                                int side) {
    trainer::DataSet data;
    for (const auto& rec : records) {
        if (!subset.empty() && rec.split != subset) continue;
        data.ids.push_back(rec.image_path);
        data.images.push_back(load_input_image(resolve(base, rec.image_path), side));
        data.labels.push_back(taxonomy::project(rec.labels, view));
    }
    return data;
}

} // namespace

std::vector<std::filesystem::path> stage_train(const runconfig::RunConfig& cfg,
                                               const std::filesystem::path& manifest,
                                               const std::filesystem::path& out_dir, int threads) {
    const auto records = dataset::load_manifest(manifest);
    for (const auto& rec : records)
        if (rec.split.empty())
            throw std::runtime_error("train: manifest has no split column values; run split first");
    auto problem = build_problem(cfg, records);

    const auto base = manifest.parent_path();
    const auto train_set =
        collect_subset(problem.records, base, problem.view, "train", cfg.train.input_side);
    const auto val_set =
        collect_subset(problem.records, base, problem.view, "val", cfg.train.input_side);

    trainer::TrainConfig tc = cfg.train;
    tc.master_seed = cfg.seed;
    const auto spec = trainer::EnsembleSpec::standard(cfg.seed);
    const auto checkpoints = trainer::train_ensemble(spec, tc, train_set, val_set, problem.weights,
                                                     problem.view.labels, threads);

    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> files;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        const auto path = out_dir / (spec.members[i].name + ".imlx");
        trainer::save_checkpoint(path, checkpoints[i]);
        files.push_back(path);
    }
    return files;
}

std::vector<std::filesystem::path> stage_predict(const runconfig::RunConfig& cfg,
                                                 const std::filesystem::path& manifest,
                                                 const std::filesystem::path& checkpoint_dir,
                                                 const std::filesystem::path& out_dir,
                                                 const std::string& subset) {
    const auto records = dataset::load_manifest(manifest);
    const auto base = manifest.parent_path();
    const auto files = checkpoint_files(checkpoint_dir);

    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> out_files;
    for (const auto& file : files) {
        const auto ckpt = trainer::load_checkpoint(file);
        ensemble::PredictionMatrix matrix;
        matrix.system = ckpt.member.name;
        matrix.labels = ckpt.label_names;
        std::vector<Image> images;
        for (const auto& rec : records) {
            if (!subset.empty() && rec.split != subset) continue;
            matrix.sample_ids.push_back(rec.image_path);
            images.push_back(load_input_image(resolve(base, rec.image_path),
                                              ckpt.params.input_side));
        }
        if (images.empty()) throw std::runtime_error("predict: no samples in subset '" + subset + "'");
        matrix.values = trainer::predict(ckpt, images, cfg.train.batch_size);
        const auto out_path = out_dir / (ckpt.member.name + ".csv");
        ensemble::write_prediction_csv(out_path, matrix);
        out_files.push_back(out_path);
    }
    return out_files;
}

namespace {

std::vector<ensemble::PredictionMatrix> read_member_matrices(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir))
        throw std::runtime_error("prediction directory missing: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".csv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no prediction CSVs in " + dir.string());
    std::vector<ensemble::PredictionMatrix> matrices;
    for (const auto& f : files)
        matrices.push_back(ensemble::read_prediction_csv(f, f.stem().string()));
    return matrices;
}

} // namespace

void stage_ensemble(const runconfig::RunConfig& cfg, const std::filesystem::path& prediction_dir,
                    const std::filesystem::path& out_dir) {
    const auto matrices = read_member_matrices(prediction_dir);
    std::filesystem::create_directories(out_dir);
    const auto combined = ensemble::ctp(matrices, cfg.binarize_threshold);
    ensemble::write_ensemble_csv(out_dir / "ctp.csv", combined);
    ensemble::write_agreement_csv(out_dir / "agreement.csv", combined);
    ensemble::write_ensemble_csv(out_dir / "ptc_lw.csv",
                                 ensemble::ptc_lw(matrices, cfg.binarize_threshold));
    ensemble::write_ensemble_csv(out_dir / "ptc_mode.csv",
                                 ensemble::ptc_mode(matrices, cfg.binarize_threshold));
}

void stage_evaluate(const runconfig::RunConfig& cfg, const std::filesystem::path& manifest,
                    const std::filesystem::path& prediction_dir,
                    const std::filesystem::path& ensemble_dir,
                    const std::filesystem::path& out_dir, const std::string& subset) {
    const auto matrices = read_member_matrices(prediction_dir);
    const auto records = dataset::load_manifest(manifest);
    auto problem = build_problem(cfg, records);

    std::map<std::string, std::vector<std::uint8_t>> truth_by_id;
    for (const auto& rec : problem.records) {
        if (!subset.empty() && rec.split != subset) continue;
        truth_by_id[rec.image_path] = taxonomy::project(rec.labels, problem.view);
    }
    std::vector<metrics::SystemScores> systems;
    const auto& ids = matrices.front().sample_ids;
    const auto& labels = matrices.front().labels;
    if (labels != problem.view.labels)
        throw std::runtime_error("evaluate: prediction labels do not match the taxonomy view");

    std::vector<std::uint8_t> truth;
    truth.reserve(ids.size() * labels.size());
    for (const auto& id : ids) {
        auto it = truth_by_id.find(id);
        if (it == truth_by_id.end())
            throw std::runtime_error("evaluate: sample '" + id + "' missing from manifest subset");
        truth.insert(truth.end(), it->second.begin(), it->second.end());
    }

    for (const auto& m : matrices) systems.push_back({m.system, m.values});
    for (const char* name : {"ptc_mode", "ptc_lw", "ctp"}) {
        const auto path = ensemble_dir / (std::string(name) + ".csv");
        if (!std::filesystem::exists(path))
            throw std::runtime_error("evaluate: missing ensemble file " + path.string());
        const auto m = ensemble::read_prediction_csv(path, name);
        if (m.sample_ids != ids)
            throw std::runtime_error("evaluate: ensemble rows are not aligned with predictions");
        systems.push_back({m.system, m.values});
    }

    const auto table = metrics::build_result_table(truth, labels, systems, cfg.binarize_threshold);
    std::filesystem::create_directories(out_dir);
    metrics::write_result_table_csv(out_dir / "results.csv", table);
    metrics::write_hamming_csv(out_dir / "hamming.csv", table);
}

void stage_explain(const runconfig::RunConfig& cfg, const std::filesystem::path& manifest,
                   const std::filesystem::path& checkpoint_dir,
                   const std::filesystem::path& ensemble_dir,
                   const std::filesystem::path& out_dir, int limit) {
    const auto ctp_path = ensemble_dir / "ctp.csv";
    const auto agree_path = ensemble_dir / "agreement.csv";
    for (const auto& p : {ctp_path, agree_path})
        if (!std::filesystem::exists(p))
            throw std::runtime_error("explain: missing ensemble file " + p.string());
    const auto ctp = ensemble::read_prediction_csv(ctp_path, "ctp");
    const auto agree = ensemble::read_prediction_csv(agree_path, "agreement");

    std::vector<trainer::Checkpoint> members;
    for (const auto& file : checkpoint_files(checkpoint_dir))
        members.push_back(trainer::load_checkpoint(file));

    const auto records = dataset::load_manifest(manifest);
    const auto base = manifest.parent_path();
    std::map<std::string, const SampleRecord*> by_id;
    for (const auto& rec : records) by_id[rec.image_path] = &rec;

    std::filesystem::create_directories(out_dir);
    const int count = limit <= 0 ? ctp.rows() : std::min(limit, ctp.rows());
    const int L = ctp.cols();
    for (int n = 0; n < count; ++n) {
        const auto& id = ctp.sample_ids[n];
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::runtime_error("explain: sample '" + id + "' missing from manifest");
        const Image input = load_input_image(resolve(base, id), members.front().params.input_side);

        std::vector<float> probs(L);
        std::vector<int> votes(L);
        for (int c = 0; c < L; ++c) {
            probs[c] = ctp.at(n, c);
            votes[c] = static_cast<int>(agree.at(n, c));
        }
        explain::report(file_stem_from_rel(id), members, input, probs, votes, ctp.labels,
                        cfg.binarize_threshold, out_dir, cfg.overlay);
    }
}

void run_pipeline(const runconfig::RunConfig& cfg, int threads) {
    const auto paths = StagePaths::under(cfg.out);
    std::filesystem::path manifest = cfg.manifest;
    if (cfg.synth_enabled || manifest.empty())
        manifest = stage_synth(cfg, paths.synth_dir);

    runconfig::RunConfig stage_cfg = cfg;
    if (stage_cfg.taxonomy.empty()) stage_cfg.taxonomy = paths.synth_dir / "taxonomy.txt";

    const auto preproc_manifest = stage_preprocess(stage_cfg, manifest, paths.preproc_dir);
    const auto split_manifest = stage_split(stage_cfg, preproc_manifest, paths.split_manifest);
    stage_train(stage_cfg, split_manifest, paths.train_dir, threads);
    stage_predict(stage_cfg, split_manifest, paths.train_dir, paths.predict_dir);
    stage_ensemble(stage_cfg, paths.predict_dir, paths.ensemble_dir);
    stage_evaluate(stage_cfg, split_manifest, paths.predict_dir, paths.ensemble_dir, paths.eval_dir);
    stage_explain(stage_cfg, split_manifest, paths.train_dir, paths.ensemble_dir, paths.explain_dir,
                  cfg.explain_limit);
}

void write_run_record(const runconfig::RunConfig& cfg, const std::filesystem::path& out_dir,
                      const std::string& command) {
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                  static_cast<unsigned long long>(cfg.config_hash()));
    json record;
    record["command"] = command;
    record["seed"] = std::to_string(cfg.seed);
    record["config_hash"] = hash_hex;
    record["view"] = cfg.view == taxonomy::ViewKind::specific ? "specific" : "general";
    record["support_threshold"] = cfg.support_threshold;
    record["binarize_threshold"] = cfg.binarize_threshold;
    record["formats"] = {{"checkpoint", 1}, {"manifest", 1}, {"predictions", 1}, {"results", 1}};
    record["config"] = cfg.raw;
    std::filesystem::create_directories(out_dir);
    atomic_write(out_dir / "run_record.json", record.dump(2) + "\n");
}

} // namespace imlx::pipeline
