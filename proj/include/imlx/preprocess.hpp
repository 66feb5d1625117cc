#pragma once

#include <cstdint>
#include <vector>

#include "imlx/image.hpp"

namespace imlx::preprocess {

// Channel mean, bilinear resize to work_side x work_side, min-max scale to
// [0,1]. A constant image maps to all zeros.
Image standardize(const Raster& raster, int work_side = 512);

// Bilinear resample, half-pixel centers, clamp-to-edge; aspect distortion allowed.
Image resize(const Image& image, int side);
Image resize_bilinear(const Image& image, int out_height, int out_width);

// Nearest-neighbour resample for binary grids.
Mask resize_mask_nearest(const Mask& mask, int out_height, int out_width);

struct ComponentLabels {
    std::vector<std::int32_t> labels; // -1 background, else component id
    std::vector<std::size_t> areas;   // per component, scan order
    int count = 0;
};

// 4-connected components of the foreground.
ComponentLabels label_components(const Mask& mask);

// Fills interior holes: zeros unreachable from the border become foreground.
// The result is always a superset of the input.
Mask fill_holes(const Mask& mask);

struct MaskPostResult {
    Mask mask;
    bool warning = false; // all-zero input (or nothing survived the area filter)
};

// Fills interior holes (flood fill from the border complement), removes
// components below min_area_fraction of the image area keeping at most the two
// largest, and splits a single mask spanning both halves with a vertical cut
// at the lowest column occupancy inside the central third.
MaskPostResult postprocess_mask(const Mask& mask, double min_area_fraction = 0.05);

struct CropResult {
    Image image;
    CropBox box;
    bool warning = false; // empty mask, full-frame box returned
};

// Bounding box of the mask, extended down to the last row, widened by a 2%
// margin per side, clamped; the image is cropped to the box.
CropResult crop_to_roi(const Image& image, const Mask& mask, double margin_fraction = 0.02);

// Geometry of one preprocessed sample: original raster -> work_side square ->
// crop box -> out_side square. Maps original-image coordinates into the final
// model input, used when ground-truth regions have to follow the crop.
struct RoiTransform {
    int orig_height = 0, orig_width = 0;
    int work_side = 512;
    CropBox crop;
    int out_side = 0;

    void map_point(double r, double c, double& out_r, double& out_c) const;
    CropBox map_box(double r0, double c0, double r1, double c1) const;
};

} // namespace imlx::preprocess
