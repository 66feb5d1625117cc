#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imlx/runconfig.hpp"

namespace imlx::pipeline {

// Relative manifest entries resolve against the manifest's directory.
std::filesystem::path resolve(const std::filesystem::path& base, const std::string& rel);

struct StagePaths {
    std::filesystem::path synth_dir;
    std::filesystem::path preproc_dir;
    std::filesystem::path split_manifest;
    std::filesystem::path train_dir;
    std::filesystem::path predict_dir;
    std::filesystem::path ensemble_dir;
    std::filesystem::path eval_dir;
    std::filesystem::path explain_dir;

    static StagePaths under(const std::filesystem::path& out);
};

std::filesystem::path stage_synth(const runconfig::RunConfig& cfg,
                                  const std::filesystem::path& out_dir);

// standardize -> mask postprocess -> ROI crop -> resize; writes 16-bit PGMs,
// a rebased manifest and the crop geometry table.
std::filesystem::path stage_preprocess(const runconfig::RunConfig& cfg,
                                       const std::filesystem::path& manifest,
                                       const std::filesystem::path& out_dir);

// support filter then patient-grouped stratified split; emits the pruned
// manifest with the split column filled.
std::filesystem::path stage_split(const runconfig::RunConfig& cfg,
                                  const std::filesystem::path& manifest,
                                  const std::filesystem::path& out_manifest);

std::vector<std::filesystem::path> stage_train(const runconfig::RunConfig& cfg,
                                               const std::filesystem::path& manifest,
                                               const std::filesystem::path& out_dir, int threads);

std::vector<std::filesystem::path> stage_predict(const runconfig::RunConfig& cfg,
                                                 const std::filesystem::path& manifest,
                                                 const std::filesystem::path& checkpoint_dir,
                                                 const std::filesystem::path& out_dir,
                                                 const std::string& subset = "test");

void stage_ensemble(const runconfig::RunConfig& cfg, const std::filesystem::path& prediction_dir,
                    const std::filesystem::path& out_dir);

void stage_evaluate(const runconfig::RunConfig& cfg, const std::filesystem::path& manifest,
                    const std::filesystem::path& prediction_dir,
                    const std::filesystem::path& ensemble_dir,
                    const std::filesystem::path& out_dir, const std::string& subset = "test");

void stage_explain(const runconfig::RunConfig& cfg, const std::filesystem::path& manifest,
                   const std::filesystem::path& checkpoint_dir,
                   const std::filesystem::path& ensemble_dir,
                   const std::filesystem::path& out_dir, int limit);

// synth (when enabled) then preprocess, split, train, predict, ensemble,
// evaluate, explain under one output root.
void run_pipeline(const runconfig::RunConfig& cfg, int threads);

void write_run_record(const runconfig::RunConfig& cfg, const std::filesystem::path& out_dir,
                      const std::string& command);

} // namespace imlx::pipeline
