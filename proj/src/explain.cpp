#include "imlx/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "imlx/image_io.hpp"
#include "imlx/preprocess.hpp"

namespace imlx::explain {

using json = nlohmann::ordered_json;

HeatMap grad_cam(const nn::RefNetParams& params, const Image& input, int label_index,
                 const std::string& label_name, const std::string& source) {
    if (label_index < 0 || label_index >= params.label_count)
        throw std::invalid_argument("grad_cam: label index out of range");
    if (input.height != params.input_side || input.width != params.input_side)
        throw std::invalid_argument("grad_cam: input side does not match the network");

    Tensor batch({1, 1, params.input_side, params.input_side});
    std::copy(input.pixels.begin(), input.pixels.end(), batch.ptr());
    Rng unused(0);
    auto fr = nn::forward(params, batch, nn::Mode::eval, unused);

    const int F2 = params.conv2_filters;
    const int side2 = params.input_side / 2;
    const std::size_t plane = static_cast<std::size_t>(side2) * side2;

    const std::vector<float> grad = nn::logit_grad_wrt_tap(params, fr.cache, 0, label_index);

    // channel weights: spatial mean of the tap gradient
    std::vector<double> alpha(F2, 0.0);
    for (int f = 0; f < F2; ++f) {
        double sum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) sum += grad[f * plane + i];
        alpha[f] = sum / static_cast<double>(plane);
    }

    Image raw(side2, side2);
    for (std::size_t i = 0; i < plane; ++i) {
        double v = 0.0;
        for (int f = 0; f < F2; ++f) v += alpha[f] * fr.cache.act2[f * plane + i];
        raw.pixels[i] = v > 0.0 ? static_cast<float>(v) : 0.0f;
    }

    float lo = raw.pixels[0], hi = raw.pixels[0];
    for (float v : raw.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) {
        std::fill(raw.pixels.begin(), raw.pixels.end(), 0.0f); // degenerate: constant map
    } else {
        const float scale = 1.0f / (hi - lo);
        for (float& v : raw.pixels) v = (v - lo) * scale;
    }

    HeatMap heat;
    heat.grid = preprocess::resize_bilinear(raw, params.input_side, params.input_side);
    for (float& v : heat.grid.pixels) v = std::clamp(v, 0.0f, 1.0f);
    heat.label = label_name;
    heat.source = source;
    return heat;
}

HeatMap ensemble_heatmap(const std::vector<HeatMap>& maps) {
    if (maps.empty()) throw std::invalid_argument("ensemble_heatmap: no maps given");
    const int H = maps.front().grid.height, W = maps.front().grid.width;
    for (const auto& m : maps)
        if (m.grid.height != H || m.grid.width != W)
            throw std::invalid_argument("ensemble_heatmap: map dims disagree");
    HeatMap out;
    out.grid = Image(H, W);
    out.label = maps.front().label;
    out.source = "ensemble";
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (std::size_t i = 0; i < out.grid.pixels.size(); ++i) {
        double sum = 0.0;
        for (const auto& m : maps) sum += m.grid.pixels[i];
        out.grid.pixels[i] = static_cast<float>(sum * inv);
    }
    return out;
}

namespace {

void colormap_rgb(OverlayOptions::Colormap map, float t, float rgb[3]) {
    t = std::clamp(t, 0.0f, 1.0f);
    if (map == OverlayOptions::Colormap::blue) {
        rgb[0] = 1.0f - t;
        rgb[1] = 1.0f - 0.75f * t;
        rgb[2] = 1.0f;
    } else { // amber
        rgb[0] = 1.0f;
        rgb[1] = 1.0f - 0.45f * t;
        rgb[2] = 1.0f - t;
    }
}

std::string format_probability(double p) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", p);
    return buf;
}

} // namespace

Overlay render_overlay(const Image& image, const HeatMap& heat, const std::string& label,
                       double probability, int agreement, int member_count,
                       const OverlayOptions& opts) {
    if (image.height != heat.grid.height || image.width != heat.grid.width)
        throw std::invalid_argument("render_overlay: image and heatmap dims disagree");

    Overlay out;
    out.height = image.height;
    out.width = image.width;
    out.rgb.resize(static_cast<std::size_t>(image.height) * image.width * 3);
    const float alpha = static_cast<float>(opts.alpha);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const float gray = std::clamp(image.pixels[i], 0.0f, 1.0f);
        const float h = heat.grid.pixels[i];
        float r, g, b;
        if (h < opts.heat_threshold) {
            r = g = b = gray;
        } else {
            float c[3];
            colormap_rgb(opts.colormap, h, c);
            r = alpha * c[0] + (1.0f - alpha) * gray;
            g = alpha * c[1] + (1.0f - alpha) * gray;
            b = alpha * c[2] + (1.0f - alpha) * gray;
        }
        out.rgb[i * 3 + 0] = static_cast<std::uint8_t>(std::clamp(r, 0.0f, 1.0f) * 255.0f + 0.5f);
        out.rgb[i * 3 + 1] = static_cast<std::uint8_t>(std::clamp(g, 0.0f, 1.0f) * 255.0f + 0.5f);
        out.rgb[i * 3 + 2] = static_cast<std::uint8_t>(std::clamp(b, 0.0f, 1.0f) * 255.0f + 0.5f);
    }
    out.caption = label + " p=" + format_probability(probability) + " agreement=" +
                  std::to_string(agreement) + "/" + std::to_string(member_count);
    return out;
}

namespace {

void write_heatmap_pgm(const std::filesystem::path& path, const HeatMap& heat) {
    write_pgm(path, heat.grid, 255);
}

std::string sanitize(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (c == ' ' || c == '/' || c == '\\') c = '_';
    return s;
}

} // namespace

HeatmapReport report(const std::string& sample_id, const std::vector<trainer::Checkpoint>& members,
                     const Image& input, const std::vector<float>& ctp_probs,
                     const std::vector<int>& agreement, const std::vector<std::string>& labels,
                     double threshold, const std::filesystem::path& out_dir,
                     const OverlayOptions& opts) {
    if (members.empty()) throw std::invalid_argument("report: no ensemble members");
    if (ctp_probs.size() != labels.size() || agreement.size() != labels.size())
        throw std::invalid_argument("report: probability/agreement/label sizes disagree");

    const std::filesystem::path sample_dir = out_dir / sample_id;
    std::filesystem::create_directories(sample_dir);

    std::vector<int> selected;
    for (std::size_t c = 0; c < labels.size(); ++c)
        if (ctp_probs[c] >= threshold) selected.push_back(static_cast<int>(c));
    bool below = false;
    if (selected.empty()) {
        // nothing cleared the threshold: emit the most probable label, flagged
        int best = 0;
        for (std::size_t c = 1; c < labels.size(); ++c)
            if (ctp_probs[c] > ctp_probs[best]) best = static_cast<int>(c);
        selected.push_back(best);
        below = true;
    }

    HeatmapReport rep;
    rep.sample_id = sample_id;
    rep.member_count = static_cast<int>(members.size());

    json meta;
    meta["sample_id"] = sample_id;
    meta["labels"] = json::array();

    for (int c : selected) {
        std::vector<HeatMap> per_member;
        per_member.reserve(members.size());
        for (const auto& member : members)
            per_member.push_back(grad_cam(member.params, input, c, labels[c], member.member.name));
        HeatMap combined = ensemble_heatmap(per_member);

        const std::string stem = sanitize(labels[c]);
        const std::string heat_rel = sample_id + "/" + stem + "_heat.pgm";
        const std::string overlay_rel = sample_id + "/" + stem + "_overlay.png";
        write_heatmap_pgm(out_dir / heat_rel, combined);

        Overlay overlay = render_overlay(input, combined, labels[c], ctp_probs[c], agreement[c],
                                         rep.member_count, opts);
        write_png_rgb(out_dir / overlay_rel, overlay.height, overlay.width, overlay.rgb);

        ReportEntry entry;
        entry.label = labels[c];
        entry.probability = std::round(ctp_probs[c] * 100.0) / 100.0;
        entry.agreement = agreement[c];
        entry.below_threshold = below;
        entry.heatmap_path = heat_rel;
        entry.overlay_path = overlay_rel;
        rep.entries.push_back(entry);

        json jentry;
        jentry["name"] = entry.label;
        jentry["probability"] = entry.probability;
        jentry["agreement"] = std::to_string(entry.agreement) + "/" + std::to_string(rep.member_count);
        if (below) jentry["below_threshold"] = true;
        jentry["heatmap_path"] = entry.heatmap_path;
        jentry["overlay_path"] = entry.overlay_path;
        meta["labels"].push_back(jentry);
    }

    const std::string meta_rel = sample_id + "/report.json";
    atomic_write(out_dir / meta_rel, meta.dump(2) + "\n");
    rep.metadata_path = meta_rel;
    return rep;
}

} // namespace imlx::explain
