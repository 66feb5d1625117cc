#include "imlx/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace imlx::preprocess {

namespace {

inline float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

float bilinear_sample(const Image& img, double r, double c) {
    // clamp-to-edge
    r = std::max(0.0, std::min(r, static_cast<double>(img.height - 1)));
    c = std::max(0.0, std::min(c, static_cast<double>(img.width - 1)));
    const int r0 = static_cast<int>(r);
    const int c0 = static_cast<int>(c);
    const int r1 = std::min(r0 + 1, img.height - 1);
    const int c1 = std::min(c0 + 1, img.width - 1);
    const double fr = r - r0, fc = c - c0;
    const double top = img.at(r0, c0) * (1.0 - fc) + img.at(r0, c1) * fc;
    const double bot = img.at(r1, c0) * (1.0 - fc) + img.at(r1, c1) * fc;
    return static_cast<float>(top * (1.0 - fr) + bot * fr);
}

} // namespace

Image resize_bilinear(const Image& image, int out_height, int out_width) {
    if (image.height <= 0 || image.width <= 0)
        throw std::invalid_argument("resize: empty image");
    if (out_height < 1 || out_width < 1)
        throw std::invalid_argument("resize: target must be at least 1x1");
    Image out(out_height, out_width);
    const double sr = static_cast<double>(image.height) / out_height;
    const double sc = static_cast<double>(image.width) / out_width;
    for (int r = 0; r < out_height; ++r) {
        const double src_r = (r + 0.5) * sr - 0.5;
        for (int c = 0; c < out_width; ++c) {
            const double src_c = (c + 0.5) * sc - 0.5;
            out.at(r, c) = bilinear_sample(image, src_r, src_c);
        }
    }
    return out;
}

Image resize(const Image& image, int side) {
    if (side < 8) throw std::invalid_argument("resize: side must be >= 8");
    return resize_bilinear(image, side, side);
}

Mask resize_mask_nearest(const Mask& mask, int out_height, int out_width) {
    Mask out(out_height, out_width);
    const double sr = static_cast<double>(mask.height) / out_height;
    const double sc = static_cast<double>(mask.width) / out_width;
    for (int r = 0; r < out_height; ++r) {
        int src_r = static_cast<int>((r + 0.5) * sr);
        src_r = std::min(src_r, mask.height - 1);
        for (int c = 0; c < out_width; ++c) {
            int src_c = static_cast<int>((c + 0.5) * sc);
            src_c = std::min(src_c, mask.width - 1);
            out.at(r, c) = mask.at(src_r, src_c);
        }
    }
    return out;
}

Image standardize(const Raster& raster, int work_side) {
    if (raster.height <= 0 || raster.width <= 0 || raster.channels <= 0 || raster.data.empty())
        throw std::invalid_argument("standardize: empty raster");
    if (raster.height < 8 || raster.width < 8)
        throw std::invalid_argument("standardize: raster must be at least 8x8");

    Image gray(raster.height, raster.width);
    const std::size_t plane = static_cast<std::size_t>(raster.height) * raster.width;
    const float inv_c = 1.0f / static_cast<float>(raster.channels);
    for (std::size_t i = 0; i < plane; ++i) {
        float sum = 0.0f;
        for (int ch = 0; ch < raster.channels; ++ch) sum += raster.data[ch * plane + i];
        gray.pixels[i] = sum * inv_c;
    }

    Image resized = resize_bilinear(gray, work_side, work_side);

    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : resized.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) {
        std::fill(resized.pixels.begin(), resized.pixels.end(), 0.0f);
        return resized;
    }
    const float scale = 1.0f / (hi - lo);
    for (float& v : resized.pixels) v = clampf((v - lo) * scale, 0.0f, 1.0f);
    return resized;
}

ComponentLabels label_components(const Mask& mask) {
    ComponentLabels out;
    out.labels.assign(mask.size(), -1);
    std::vector<std::size_t> stack;
    const int H = mask.height, W = mask.width;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask.cells[start] || out.labels[start] >= 0) continue;
        const std::int32_t id = out.count++;
        std::size_t area = 0;
        stack.push_back(start);
        out.labels[start] = id;
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            ++area;
            const int r = static_cast<int>(cur / W);
            const int c = static_cast<int>(cur % W);
            const int nr[4] = {r - 1, r + 1, r, r};
            const int nc[4] = {c, c, c - 1, c + 1};
            for (int k = 0; k < 4; ++k) {
                if (nr[k] < 0 || nr[k] >= H || nc[k] < 0 || nc[k] >= W) continue;
                const std::size_t ni = static_cast<std::size_t>(nr[k]) * W + nc[k];
                if (mask.cells[ni] && out.labels[ni] < 0) {
                    out.labels[ni] = id;
                    stack.push_back(ni);
                }
            }
        }
        out.areas.push_back(area);
    }
    return out;
}

namespace {

// background reachable from the border, 4-connected over zero cells
std::vector<std::uint8_t> border_background(const Mask& mask) {
    const int H = mask.height, W = mask.width;
    std::vector<std::uint8_t> reached(mask.size(), 0);
    std::vector<std::size_t> stack;
    auto push = [&](int r, int c) {
        const std::size_t i = static_cast<std::size_t>(r) * W + c;
        if (!mask.cells[i] && !reached[i]) {
            reached[i] = 1;
            stack.push_back(i);
        }
    };
    for (int c = 0; c < W; ++c) {
        push(0, c);
        push(H - 1, c);
    }
    for (int r = 0; r < H; ++r) {
        push(r, 0);
        push(r, W - 1);
    }
    while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        const int r = static_cast<int>(cur / W);
        const int c = static_cast<int>(cur % W);
        if (r > 0) push(r - 1, c);
        if (r + 1 < H) push(r + 1, c);
        if (c > 0) push(r, c - 1);
        if (c + 1 < W) push(r, c + 1);
    }
    return reached;
}

} // namespace

Mask fill_holes(const Mask& mask) {
    Mask out = mask;
    const auto reached = border_background(mask);
    for (std::size_t i = 0; i < out.cells.size(); ++i)
        if (!out.cells[i] && !reached[i]) out.cells[i] = 1;
    return out;
}

MaskPostResult postprocess_mask(const Mask& mask, double min_area_fraction) {
    MaskPostResult out;
    out.mask = mask;
    if (mask.area() == 0) {
        out.warning = true;
        return out;
    }
    const int H = mask.height, W = mask.width;

    // 1) fill interior holes
    out.mask = fill_holes(out.mask);

    // 2) drop small components, keep at most the two largest
    ComponentLabels comps = label_components(out.mask);
    const auto min_area =
        static_cast<std::size_t>(min_area_fraction * static_cast<double>(H) * W);
    std::vector<int> keep;
    for (int i = 0; i < comps.count; ++i)
        if (comps.areas[i] >= min_area) keep.push_back(i);
    std::stable_sort(keep.begin(), keep.end(),
                     [&](int a, int b) { return comps.areas[a] > comps.areas[b]; });
    if (keep.size() > 2) keep.resize(2);
    std::vector<std::uint8_t> retained(comps.count, 0);
    for (int id : keep) retained[id] = 1;
    for (std::size_t i = 0; i < out.mask.cells.size(); ++i)
        if (out.mask.cells[i] && !retained[comps.labels[i]]) out.mask.cells[i] = 0;

    if (keep.empty()) {
        out.warning = true;
        return out;
    }

    // 3) one component spanning both halves: cut the sparsest central column
    if (keep.size() == 1) {
        int min_col = W, max_col = -1;
        std::vector<int> occupancy(W, 0);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                if (out.mask.at(r, c)) {
                    occupancy[c] += 1;
                    min_col = std::min(min_col, c);
                    max_col = std::max(max_col, c);
                }
            }
        }
        const int mid = W / 2;
        if (min_col < mid && max_col >= mid) {
            const int lo = W / 3;
            const int hi = std::max(lo + 1, 2 * W / 3);
            int cut = lo;
            for (int c = lo; c < hi; ++c)
                if (occupancy[c] < occupancy[cut]) cut = c;
            for (int r = 0; r < H; ++r) out.mask.at(r, cut) = 0;
        }
    }
    return out;
}

CropResult crop_to_roi(const Image& image, const Mask& mask, double margin_fraction) {
    if (image.height != mask.height || image.width != mask.width)
        throw std::invalid_argument("crop_to_roi: image and mask dims disagree");
    const int H = image.height, W = image.width;

    CropResult out;
    int r0 = H, r1 = -1, c0 = W, c1 = -1;
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            if (!mask.at(r, c)) continue;
            r0 = std::min(r0, r);
            r1 = std::max(r1, r);
            c0 = std::min(c0, c);
            c1 = std::max(c1, c);
        }
    }
    if (r1 < 0) {
        out.warning = true;
        out.box = {0, 0, H - 1, W - 1};
        out.image = image;
        return out;
    }

    r1 = H - 1; // keep the area underneath the lungs
    const int mr = static_cast<int>(margin_fraction * H);
    const int mc = static_cast<int>(margin_fraction * W);
    out.box.r0 = std::max(0, r0 - mr);
    out.box.r1 = std::min(H - 1, r1 + mr);
    out.box.c0 = std::max(0, c0 - mc);
    out.box.c1 = std::min(W - 1, c1 + mc);

    out.image = Image(out.box.rows(), out.box.cols());
    for (int r = 0; r < out.box.rows(); ++r)
        for (int c = 0; c < out.box.cols(); ++c)
            out.image.at(r, c) = image.at(out.box.r0 + r, out.box.c0 + c);
    return out;
}

void RoiTransform::map_point(double r, double c, double& out_r, double& out_c) const {
    // original -> work square
    const double wr = (r + 0.5) * work_side / orig_height - 0.5;
    const double wc = (c + 0.5) * work_side / orig_width - 0.5;
    // work -> crop-local -> final square
    const double cr = wr - crop.r0;
    const double cc = wc - crop.c0;
    out_r = (cr + 0.5) * out_side / crop.rows() - 0.5;
    out_c = (cc + 0.5) * out_side / crop.cols() - 0.5;
}

CropBox RoiTransform::map_box(double r0, double c0, double r1, double c1) const {
    double a, b, d, e;
    map_point(r0, c0, a, b);
    map_point(r1, c1, d, e);
    CropBox box;
    box.r0 = static_cast<int>(std::floor(std::min(a, d)));
    box.c0 = static_cast<int>(std::floor(std::min(b, e)));
    box.r1 = static_cast<int>(std::ceil(std::max(a, d)));
    box.c1 = static_cast<int>(std::ceil(std::max(b, e)));
    return box;
}

} // namespace imlx::preprocess
