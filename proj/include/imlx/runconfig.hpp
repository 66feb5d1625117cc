#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "imlx/dataset.hpp"
#include "imlx/explain.hpp"
#include "imlx/taxonomy.hpp"
#include "imlx/trainer.hpp"

namespace imlx::runconfig {

// Flat UTF-8 `key = value` lines, '#' comments, dotted keys for nesting.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path taxonomy;
    std::filesystem::path out;

    taxonomy::ViewKind view = taxonomy::ViewKind::specific;
    long support_threshold = 200;
    double binarize_threshold = 0.5;
    std::uint64_t seed = 0;
    bool seed_set = false;

    int work_side = 512;
    double mask_min_area_fraction = 0.05;
    double crop_margin_fraction = 0.02;

    std::array<double, 3> split_fractions = {0.7, 0.1, 0.2};

    trainer::TrainConfig train;

    dataset::SynthConfig synth;
    bool synth_enabled = false;

    explain::OverlayOptions overlay;
    int explain_limit = 8;

    // raw key/value pairs the config was built from, for the run record
    std::map<std::string, std::string> raw;

    static RunConfig from_map(const std::map<std::string, std::string>& kv);
    std::uint64_t config_hash() const;
};

int thread_cap(); // IMLX_THREADS, 0 or unset = serial

} // namespace imlx::runconfig
