#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imlx/image.hpp"
#include "imlx/record.hpp"
#include "imlx/rng.hpp"
#include "imlx/taxonomy.hpp"

namespace imlx::dataset {

// CSV schema: image_path,patient_id,labels,mask_path,split with '|'-separated
// labels. Fields must not contain commas.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

inline constexpr const char* kSubsetNames[3] = {"train", "val", "test"};

struct SplitAssignment {
    std::map<std::string, int> subset_of; // patient id -> 0 train, 1 val, 2 test

    const char* subset_name(const std::string& patient) const {
        return kSubsetNames[subset_of.at(patient)];
    }
};

// Greedy iterative stratification over patient groups: labels are processed
// rarest-first, every unassigned carrier goes to the subset with the greatest
// remaining need for that label (ties fall to the smaller subset, then to a
// seeded draw); label-free patients fill remaining capacity afterwards.
SplitAssignment stratified_group_split(const std::vector<SampleRecord>& records,
                                       const taxonomy::LabelView& view,
                                       const std::array<double, 3>& fractions,
                                       std::uint64_t seed);

void apply_split(std::vector<SampleRecord>& records, const SplitAssignment& split);

struct AugmentConfig {
    double shear_range = 0.1;      // radians
    double zoom_lo = 0.9;
    double zoom_hi = 1.1;
    double rotation_deg = 45.0;
    double shift_fraction = 0.1;   // of width/height
    double hflip_prob = 0.5;
    double brightness_lo = 0.7;
    double brightness_hi = 1.1;
    double intensity_shift = 0.05; // additive, grayscale stand-in for channel shift

    static AugmentConfig identity();
};

struct AugmentParams {
    double rotation_rad = 0.0;
    double shear_rad = 0.0;
    double zoom = 1.0;
    double shift_rows = 0.0;
    double shift_cols = 0.0;
    bool hflip = false;
    double brightness = 1.0;
    double intensity = 0.0;
};

// Draw order is fixed: rotation, shear, zoom, row shift, col shift, flip,
// brightness, intensity.
AugmentParams sample_augment_params(const AugmentConfig& cfg, Rng& rng);

// One composed affine warp (bilinear, nearest-edge fill), then brightness
// multiply and intensity shift, clamped to [0,1].
Image apply_augment(const Image& image, const AugmentParams& params);

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng);

// ---- synthetic corpus ------------------------------------------------------

struct CoocPair {
    int first = 0;
    int second = 0;
    double share_prob = 0.0; // probability that `second` reuses `first`'s draw
};

struct SynthConfig {
    int count = 200;
    int image_side = 160;
    int patient_count = 0; // 0: derived as count/2
    // index-aligned with synth_leaf_names(); worst imbalance 20:1
    std::vector<double> prevalence = {0.5, 0.05, 0.2, 0.1, 0.3, 0.025};
    std::vector<CoocPair> cooccurrence = {{0, 2, 0.5}};
    std::uint64_t seed = 0;
};

struct GroundTruthBox {
    std::string image_path;
    std::string label;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0; // x = column, y = row, inclusive
};

struct SynthResult {
    std::filesystem::path manifest_path;
    std::filesystem::path taxonomy_path;
    std::filesystem::path boxes_path;
    std::vector<SampleRecord> records;
    std::vector<GroundTruthBox> boxes;
};

// Two elliptical lung fields over low-amplitude noise; each active sign draws
// its own geometric motif (disk, ring, bar, cross, wedge, soft blob) at a
// seeded spot inside a lung. Emits images, masks, manifest, taxonomy and
// ground-truth boxes under out_dir; byte-identical for equal configs.
SynthResult synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// The six leaf sign names drawn by the generator, index-aligned with
// SynthConfig::prevalence.
const std::vector<std::string>& synth_leaf_names();
std::string synth_taxonomy_text();

std::vector<GroundTruthBox> load_boxes(const std::filesystem::path& path);

} // namespace imlx::dataset
