#include "imlx/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "imlx/image_io.hpp"

namespace imlx::dataset {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    for (auto& f : fields) {
        while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
        std::size_t a = f.find_first_not_of(' ');
        if (a != std::string::npos && a > 0) f = f.substr(a);
        else if (a == std::string::npos) f.clear();
    }
    return fields;
}

} // namespace

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest: empty file " + path.string());
    const auto header = split_csv_line(line);
    auto column = [&header](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int col_image = column("image_path");
    const int col_patient = column("patient_id");
    const int col_labels = column("labels");
    const int col_mask = column("mask_path");
    const int col_split = column("split");
    for (const auto& [name, col] : {std::pair<const char*, int>{"image_path", col_image},
                                    {"patient_id", col_patient},
                                    {"labels", col_labels}})
        if (col < 0)
            throw std::runtime_error("manifest: missing required column '" + std::string(name) +
                                     "' in " + path.string());

    std::vector<SampleRecord> records;
    std::map<std::string, int> seen_paths;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
        SampleRecord rec;
        rec.image_path = fields[col_image];
        rec.patient_id = fields[col_patient];
        if (rec.image_path.empty())
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": empty image path");
        if (rec.patient_id.empty())
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": empty patient id");
        auto [it, inserted] = seen_paths.emplace(rec.image_path, line_no);
        if (!inserted)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": duplicate image path '" + rec.image_path +
                                     "' (first seen at line " + std::to_string(it->second) + ")");
        const std::string& labels = fields[col_labels];
        std::size_t start = 0;
        while (start <= labels.size() && !labels.empty()) {
            std::size_t bar = labels.find('|', start);
            const std::string name =
                bar == std::string::npos ? labels.substr(start) : labels.substr(start, bar - start);
            if (!name.empty()) rec.labels.insert(name);
            if (bar == std::string::npos) break;
            start = bar + 1;
        }
        if (col_mask >= 0) rec.mask_path = fields[col_mask];
        if (col_split >= 0) rec.split = fields[col_split];
        records.push_back(std::move(rec));
    }
    return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
    std::string out = "image_path,patient_id,labels,mask_path,split\n";
    for (const auto& rec : records) {
        std::string labels;
        for (const auto& name : rec.labels) {
            if (!labels.empty()) labels += "|";
            labels += name;
        }
        out += rec.image_path + "," + rec.patient_id + "," + labels + "," + rec.mask_path + "," +
               rec.split + "\n";
    }
    atomic_write(path, out);
}

SplitAssignment stratified_group_split(const std::vector<SampleRecord>& records,
                                       const taxonomy::LabelView& view,
                                       const std::array<double, 3>& fractions,
                                       std::uint64_t seed) {
    double total_frac = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split: fractions must be non-negative");
        total_frac += f;
    }
    if (std::abs(total_frac - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");

    struct Patient {
        std::string id;
        long samples = 0;
        std::vector<long> label_counts;
    };
    std::map<std::string, std::size_t> patient_index;
    std::vector<Patient> patients;
    const int L = view.label_count();
    for (const auto& rec : records) {
        auto [it, inserted] = patient_index.emplace(rec.patient_id, patients.size());
        if (inserted) patients.push_back({rec.patient_id, 0, std::vector<long>(L, 0)});
        Patient& p = patients[it->second];
        p.samples += 1;
        const auto bits = taxonomy::project(rec.labels, view);
        for (int c = 0; c < L; ++c) p.label_counts[c] += bits[c];
    }
    if (patients.size() < 3)
        throw std::invalid_argument("split: need at least as many patients as subsets");

    // deterministic base order
    std::vector<std::size_t> order(patients.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return patients[a].id < patients[b].id; });

    long total_samples = 0;
    std::vector<long> total_label(L, 0);
    for (const auto& p : patients) {
        total_samples += p.samples;
        for (int c = 0; c < L; ++c) total_label[c] += p.label_counts[c];
    }

    std::array<double, 3> capacity{};
    std::vector<std::array<double, 3>> quota(L);
    for (int j = 0; j < 3; ++j) capacity[j] = fractions[j] * static_cast<double>(total_samples);
    for (int c = 0; c < L; ++c)
        for (int j = 0; j < 3; ++j) quota[c][j] = fractions[j] * static_cast<double>(total_label[c]);

    std::vector<long> remaining(total_label);
    std::vector<int> assigned(patients.size(), -1);
    std::array<long, 3> subset_samples{0, 0, 0};
    Rng rng(mix_seed(seed, 0x5F117));

    auto assign = [&](std::size_t pi, int j) {
        assigned[pi] = j;
        subset_samples[j] += patients[pi].samples;
        capacity[j] -= static_cast<double>(patients[pi].samples);
        for (int c = 0; c < L; ++c) {
            quota[c][j] -= static_cast<double>(patients[pi].label_counts[c]);
            remaining[c] -= patients[pi].label_counts[c];
        }
    };

    auto pick_subset = [&](const std::array<double, 3>& need) {
        // greatest need; ties -> smaller subset; then seeded draw
        std::array<int, 3> tied{};
        int tie_count = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < 3; ++j) {
            if (fractions[j] <= 0.0 && need[j] <= 0.0) continue;
            if (need[j] > best + 1e-12) {
                best = need[j];
                tied = {j, 0, 0};
                tie_count = 1;
            } else if (std::abs(need[j] - best) <= 1e-12) {
                tied[tie_count++] = j;
            }
        }
        if (tie_count == 0) return 0;
        if (tie_count == 1) return tied[0];
        long smallest = std::numeric_limits<long>::max();
        for (int k = 0; k < tie_count; ++k)
            smallest = std::min(smallest, subset_samples[tied[k]]);
        std::array<int, 3> finalists{};
        int final_count = 0;
        for (int k = 0; k < tie_count; ++k)
            if (subset_samples[tied[k]] == smallest) finalists[final_count++] = tied[k];
        if (final_count == 1) return finalists[0];
        return finalists[rng.uniform_int(static_cast<std::uint64_t>(final_count))];
    };

    while (true) {
        int rarest = -1;
        for (int c = 0; c < L; ++c) {
            if (remaining[c] <= 0) continue;
            if (rarest < 0 || remaining[c] < remaining[rarest]) rarest = c;
        }
        if (rarest < 0) break;
        for (std::size_t oi : order) {
            if (assigned[oi] >= 0 || patients[oi].label_counts[rarest] == 0) continue;
            assign(oi, pick_subset(quota[rarest]));
        }
    }

    for (std::size_t oi : order) {
        if (assigned[oi] >= 0) continue;
        assign(oi, pick_subset(capacity));
    }

    SplitAssignment out;
    for (std::size_t i = 0; i < patients.size(); ++i) out.subset_of[patients[i].id] = assigned[i];
    return out;
}

void apply_split(std::vector<SampleRecord>& records, const SplitAssignment& split) {
    for (auto& rec : records) rec.split = split.subset_name(rec.patient_id);
}

AugmentConfig AugmentConfig::identity() {
    AugmentConfig cfg;
    cfg.shear_range = 0.0;
    cfg.zoom_lo = cfg.zoom_hi = 1.0;
    cfg.rotation_deg = 0.0;
    cfg.shift_fraction = 0.0;
    cfg.hflip_prob = 0.0;
    cfg.brightness_lo = cfg.brightness_hi = 1.0;
    cfg.intensity_shift = 0.0;
    return cfg;
}

AugmentParams sample_augment_params(const AugmentConfig& cfg, Rng& rng) {
    AugmentParams p;
    const double rot_range = cfg.rotation_deg * 0.017453292519943295;
    p.rotation_rad = rng.uniform(-rot_range, rot_range);
    p.shear_rad = rng.uniform(-cfg.shear_range, cfg.shear_range);
    p.zoom = rng.uniform(cfg.zoom_lo, cfg.zoom_hi);
    p.shift_rows = rng.uniform(-cfg.shift_fraction, cfg.shift_fraction);
    p.shift_cols = rng.uniform(-cfg.shift_fraction, cfg.shift_fraction);
    p.hflip = rng.bernoulli(cfg.hflip_prob);
    p.brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
    p.intensity = rng.uniform(-cfg.intensity_shift, cfg.intensity_shift);
    return p;
}

Image apply_augment(const Image& image, const AugmentParams& params) {
    const int H = image.height, W = image.width;
    // forward map: flip, zoom, shear, rotate about the centre, then translate
    const double cs = std::cos(params.rotation_rad), sn = std::sin(params.rotation_rad);
    const double sh = std::tan(params.shear_rad);
    const double z = params.zoom;
    const double fx = params.hflip ? -1.0 : 1.0;
    // x' = cs*(z*fx*x + sh*z*y) - sn*(z*y); y' = sn*(z*fx*x + sh*z*y) + cs*(z*y)
    const double m00 = cs * z * fx;           // x <- x
    const double m01 = cs * sh * z - sn * z;  // x <- y
    const double m10 = sn * z * fx;           // y <- x
    const double m11 = sn * sh * z + cs * z;  // y <- y
    const double det = m00 * m11 - m01 * m10;
    if (std::abs(det) < 1e-12) throw std::invalid_argument("augment: degenerate transform");
    const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;

    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    const double tx = params.shift_cols * W, ty = params.shift_rows * H;

    Image out(H, W);
    for (int r = 0; r < H; ++r) {
        const double qy = r - cy - ty;
        for (int c = 0; c < W; ++c) {
            const double qx = c - cx - tx;
            const double px = i00 * qx + i01 * qy + cx;
            const double py = i10 * qx + i11 * qy + cy;
            // nearest-edge fill via clamped bilinear sampling
            const double rr = std::max(0.0, std::min(py, static_cast<double>(H - 1)));
            const double cc = std::max(0.0, std::min(px, static_cast<double>(W - 1)));
            const int r0 = static_cast<int>(rr), c0 = static_cast<int>(cc);
            const int r1 = std::min(r0 + 1, H - 1), c1 = std::min(c0 + 1, W - 1);
            const double fr = rr - r0, fc = cc - c0;
            const double top = image.at(r0, c0) * (1.0 - fc) + image.at(r0, c1) * fc;
            const double bot = image.at(r1, c0) * (1.0 - fc) + image.at(r1, c1) * fc;
            double v = top * (1.0 - fr) + bot * fr;
            v = v * params.brightness + params.intensity;
            out.at(r, c) = static_cast<float>(std::max(0.0, std::min(1.0, v)));
        }
    }
    return out;
}

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(image, sample_augment_params(cfg, rng));
}

// ---- synthetic corpus ------------------------------------------------------

const std::vector<std::string>& synth_leaf_names() {
    static const std::vector<std::string> names = {
        "round opacity",      // disk
        "ring shadow",        // annulus
        "linear band",        // bar
        "wire artifact",      // cross
        "wedge consolidation",// sector
        "diffuse haze",       // soft blob
    };
    return names;
}

std::string synth_taxonomy_text() {
    return "# synthetic term tree\n"
           "opacity\tround opacity\n"
           "opacity\tring shadow\n"
           "opacity\twedge consolidation\n"
           "opacity\tdiffuse haze\n"
           "device\twire artifact\n"
           "device\tlinear band\n";
}

namespace {

struct BoxTracker {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
    void cover(int r, int c) {
        y0 = std::min(y0, r);
        y1 = std::max(y1, r);
        x0 = std::min(x0, c);
        x1 = std::max(x1, c);
    }
    bool empty() const { return x1 < 0; }
};

void stamp(Image& img, BoxTracker& box, int r, int c, float value) {
    if (r < 0 || r >= img.height || c < 0 || c >= img.width) return;
    if (value > img.at(r, c)) img.at(r, c) = value;
    if (value >= 0.1f) box.cover(r, c);
}

struct Lung {
    double cy, cx, ry, rx;
    bool inside(double r, double c, double margin = 1.0) const {
        const double dy = (r - cy) / (ry * margin), dx = (c - cx) / (rx * margin);
        return dy * dy + dx * dx <= 1.0;
    }
};

void draw_motif(Image& img, BoxTracker& box, int label, double cy, double cx, double radius,
                Rng& rng) {
    const double theta = rng.uniform(0.0, 3.141592653589793);
    const double ct = std::cos(theta), st = std::sin(theta);
    const int reach = static_cast<int>(radius * 4.0) + 2;
    const int r_lo = static_cast<int>(cy) - reach, r_hi = static_cast<int>(cy) + reach;
    const int c_lo = static_cast<int>(cx) - reach, c_hi = static_cast<int>(cx) + reach;

    for (int r = r_lo; r <= r_hi; ++r) {
        for (int c = c_lo; c <= c_hi; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double d = std::sqrt(dy * dy + dx * dx);
            const double along = dx * ct + dy * st;
            const double across = -dx * st + dy * ct;
            float v = 0.0f;
            switch (label) {
                case 0: // solid disk with a one-pixel soft rim
                    if (d <= radius) v = 0.92f;
                    else if (d <= radius + 1.0) v = 0.92f * static_cast<float>(radius + 1.0 - d);
                    break;
                case 1: // thick ring around a dark core
                    if (d <= 1.15 * radius && d >= 0.60 * radius) v = 0.90f;
                    break;
                case 2: // long thin bar
                    if (std::abs(along) <= 2.3 * radius && std::abs(across) <= 0.30 * radius)
                        v = 0.90f;
                    break;
                case 3: // cross: two thin perpendicular bars
                    if ((std::abs(along) <= 1.8 * radius && std::abs(across) <= 0.24 * radius) ||
                        (std::abs(across) <= 1.8 * radius && std::abs(along) <= 0.24 * radius))
                        v = 0.92f;
                    break;
                case 4: { // wedge: two bright arms opening from an apex
                    const double ca1 = std::cos(theta - 0.45), sa1 = std::sin(theta - 0.45);
                    const double ca2 = std::cos(theta + 0.45), sa2 = std::sin(theta + 0.45);
                    const double along1 = dx * ca1 + dy * sa1;
                    const double across1 = -dx * sa1 + dy * ca1;
                    const double along2 = dx * ca2 + dy * sa2;
                    const double across2 = -dx * sa2 + dy * ca2;
                    if ((along1 >= 0.0 && along1 <= 2.4 * radius && std::abs(across1) <= 0.30 * radius) ||
                        (along2 >= 0.0 && along2 <= 2.4 * radius && std::abs(across2) <= 0.30 * radius))
                        v = 0.88f;
                    break;
                }
                case 5: { // broad soft haze, much larger and flatter than the disk
                    const double sigma = 1.9 * radius;
                    const double g = std::exp(-(d * d) / (2.0 * sigma * sigma));
                    if (g > 0.12) v = static_cast<float>(0.62 * g);
                    break;
                }
                default: break;
            }
            if (v > 0.0f) stamp(img, box, r, c, v);
        }
    }
}

std::string zero_pad(int value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

} // namespace

SynthResult synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.count < 1) throw std::invalid_argument("synth: count must be >= 1");
    if (cfg.image_side < 32) throw std::invalid_argument("synth: image side must be >= 32");
    const int label_count = static_cast<int>(cfg.prevalence.size());
    if (label_count < 1 || label_count > static_cast<int>(synth_leaf_names().size()))
        throw std::invalid_argument("synth: prevalence vector must have 1..6 entries");
    for (double p : cfg.prevalence)
        if (!(p > 0.0 && p < 1.0))
            throw std::invalid_argument("synth: prevalences must lie in (0,1)");
    for (const auto& pair : cfg.cooccurrence)
        if (pair.first < 0 || pair.first >= label_count || pair.second < 0 ||
            pair.second >= label_count || pair.first == pair.second)
            throw std::invalid_argument("synth: bad co-occurrence pair");

    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "masks");

    const int patients = cfg.patient_count > 0 ? cfg.patient_count : std::max(1, cfg.count / 2);
    Rng patient_rng(mix_seed(cfg.seed, 0x9A7));

    SynthResult result;
    const int S = cfg.image_side;

    for (int i = 0; i < cfg.count; ++i) {
        Rng noise_rng(mix_seed(cfg.seed, 0x100000ULL + static_cast<std::uint64_t>(i) * 4));
        Rng label_rng(mix_seed(cfg.seed, 0x100001ULL + static_cast<std::uint64_t>(i) * 4));
        Rng motif_rng(mix_seed(cfg.seed, 0x100002ULL + static_cast<std::uint64_t>(i) * 4));
        Rng geom_rng(mix_seed(cfg.seed, 0x100003ULL + static_cast<std::uint64_t>(i) * 4));

        // lungs with mild per-image jitter
        Lung left{0.47 * S + geom_rng.uniform(-0.02, 0.02) * S,
                  0.30 * S + geom_rng.uniform(-0.015, 0.015) * S,
                  0.285 * S * geom_rng.uniform(0.95, 1.05),
                  0.155 * S * geom_rng.uniform(0.95, 1.05)};
        Lung right{0.47 * S + geom_rng.uniform(-0.02, 0.02) * S,
                   0.70 * S + geom_rng.uniform(-0.015, 0.015) * S,
                   0.285 * S * geom_rng.uniform(0.95, 1.05),
                   0.155 * S * geom_rng.uniform(0.95, 1.05)};

        Image img(S, S);
        Mask mask(S, S);
        for (int r = 0; r < S; ++r) {
            for (int c = 0; c < S; ++c) {
                const bool in_left = left.inside(r, c);
                const bool in_right = right.inside(r, c);
                const float noise = static_cast<float>(noise_rng.uniform());
                img.at(r, c) = (in_left || in_right) ? 0.20f + 0.05f * noise : 0.44f + 0.05f * noise;
                mask.at(r, c) = (in_left || in_right) ? 1 : 0;
            }
        }

        // label draws; co-occurring pairs may share one uniform
        std::vector<double> u(label_count);
        for (int c = 0; c < label_count; ++c) u[c] = label_rng.uniform();
        std::vector<double> effective(u);
        for (const auto& pair : cfg.cooccurrence)
            if (label_rng.bernoulli(pair.share_prob)) effective[pair.second] = u[pair.first];
        std::vector<std::uint8_t> active(label_count, 0);
        for (int c = 0; c < label_count; ++c) active[c] = effective[c] < cfg.prevalence[c] ? 1 : 0;

        const std::string stem = "sample_" + zero_pad(i, 5);
        const std::string image_rel = "images/" + stem + ".pgm";
        const std::string mask_rel = "masks/" + stem + "_mask.pgm";

        SampleRecord rec;
        rec.image_path = image_rel;
        rec.mask_path = mask_rel;
        rec.patient_id = "p" + zero_pad(i < patients ? i
                                                     : static_cast<int>(patient_rng.uniform_int(
                                                           static_cast<std::uint64_t>(patients))),
                                        5);

        for (int c = 0; c < label_count; ++c) {
            if (!active[c]) continue;
            const Lung& lung = motif_rng.bernoulli(0.5) ? right : left;
            double cy = 0.0, cx = 0.0;
            do {
                cy = lung.cy + motif_rng.uniform(-1.0, 1.0) * lung.ry;
                cx = lung.cx + motif_rng.uniform(-1.0, 1.0) * lung.rx;
            } while (!lung.inside(cy, cx, 0.60));
            const double radius = S * motif_rng.uniform(0.075, 0.120);

            BoxTracker box;
            draw_motif(img, box, c, cy, cx, radius, motif_rng);
            if (box.empty()) continue;
            rec.labels.insert(synth_leaf_names()[c]);
            result.boxes.push_back({image_rel, synth_leaf_names()[c], box.x0, box.y0, box.x1, box.y1});
        }

        write_pgm(out_dir / image_rel, img, 255);
        write_mask_pgm(out_dir / mask_rel, mask);
        result.records.push_back(std::move(rec));
    }

    result.manifest_path = out_dir / "manifest.csv";
    result.taxonomy_path = out_dir / "taxonomy.txt";
    result.boxes_path = out_dir / "boxes.csv";
    write_manifest(result.manifest_path, result.records);
    atomic_write(result.taxonomy_path, synth_taxonomy_text());

    std::string boxes_csv = "image_path,label,x0,y0,x1,y1\n";
    for (const auto& b : result.boxes)
        boxes_csv += b.image_path + "," + b.label + "," + std::to_string(b.x0) + "," +
                     std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1) +
                     "\n";
    atomic_write(result.boxes_path, boxes_csv);
    return result;
}

std::vector<GroundTruthBox> load_boxes(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("boxes: cannot open " + path.string());
    std::string line;
    std::getline(in, line); // header
    std::vector<GroundTruthBox> boxes;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6) throw std::runtime_error("boxes: malformed row in " + path.string());
        boxes.push_back({f[0], f[1], std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]),
                         std::stoi(f[5])});
    }
    return boxes;
}

} // namespace imlx::dataset
