#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imlx/image.hpp"
#include "imlx/nn.hpp"
#include "imlx/trainer.hpp"

namespace imlx::explain {

struct HeatMap {
    Image grid;         // values in [0,1] at input resolution
    std::string label;
    std::string source; // member name or "ensemble"
};

// Channel weights are the spatial means of d(logit)/d(conv2 activations);
// heat = ReLU(sum_f alpha_f * A_f), min-max normalized (constant map -> all
// zeros), bilinearly upsampled to the input size.
HeatMap grad_cam(const nn::RefNetParams& params, const Image& input, int label_index,
                 const std::string& label_name = "", const std::string& source = "");

// Pixel-wise mean of per-member maps (already normalized per member).
HeatMap ensemble_heatmap(const std::vector<HeatMap>& maps);

struct OverlayOptions {
    double alpha = 0.9;          // heat colour opacity over active pixels
    double heat_threshold = 0.2; // below: raw grayscale shows through
    enum class Colormap { blue, amber } colormap = Colormap::blue;
};

struct Overlay {
    int height = 0, width = 0;
    std::vector<std::uint8_t> rgb;
    std::string caption; // "<label> p=<prob> agreement=<k>/<M>"
};

Overlay render_overlay(const Image& image, const HeatMap& heat, const std::string& label,
                       double probability, int agreement, int member_count,
                       const OverlayOptions& opts = {});

struct ReportEntry {
    std::string label;
    double probability = 0.0;
    int agreement = 0;
    bool below_threshold = false;
    std::string heatmap_path;
    std::string overlay_path;
};

struct HeatmapReport {
    std::string sample_id;
    int member_count = 0;
    std::vector<ReportEntry> entries;
    std::string metadata_path;
};

// One overlay per positively predicted label (combine-then-predict
// probabilities); when nothing clears the threshold the most probable label is
// emitted flagged below_threshold. Writes heatmap PGMs, overlay PNGs and one
// JSON metadata file under out_dir/<sample_id>/.
HeatmapReport report(const std::string& sample_id, const std::vector<trainer::Checkpoint>& members,
                     const Image& input, const std::vector<float>& ctp_probs,
                     const std::vector<int>& agreement, const std::vector<std::string>& labels,
                     double threshold, const std::filesystem::path& out_dir,
                     const OverlayOptions& opts = {});

} // namespace imlx::explain
