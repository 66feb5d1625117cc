#include "imlx/runconfig.hpp"

#include <cstdlib>
#include <stdexcept>

#include "imlx/image_io.hpp"

namespace imlx::runconfig {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
    return parse_config_text(read_file(path));
}

namespace {

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + value + "'");
    }
}

long to_long(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + value + "'");
}

std::vector<double> to_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= value.size()) {
        std::size_t comma = value.find(',', start);
        const std::string cell = comma == std::string::npos ? value.substr(start)
                                                            : value.substr(start, comma - start);
        if (!trim(cell).empty()) out.push_back(to_double(key, trim(cell)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

// "first:second:prob;first:second:prob"
std::vector<dataset::CoocPair> to_cooc(const std::string& key, const std::string& value) {
    std::vector<dataset::CoocPair> pairs;
    std::size_t start = 0;
    while (start <= value.size()) {
        std::size_t semi = value.find(';', start);
        const std::string cell = trim(semi == std::string::npos ? value.substr(start)
                                                                : value.substr(start, semi - start));
        if (!cell.empty()) {
            const std::size_t c1 = cell.find(':');
            const std::size_t c2 = cell.find(':', c1 == std::string::npos ? 0 : c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw std::invalid_argument("config: '" + key + "' expects a:b:prob entries");
            dataset::CoocPair pair;
            pair.first = static_cast<int>(to_long(key, cell.substr(0, c1)));
            pair.second = static_cast<int>(to_long(key, cell.substr(c1 + 1, c2 - c1 - 1)));
            pair.share_prob = to_double(key, cell.substr(c2 + 1));
            pairs.push_back(pair);
        }
        if (semi == std::string::npos) break;
        start = semi + 1;
    }
    return pairs;
}

} // namespace

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    cfg.raw = kv;
    for (const auto& [key, value] : kv) {
        if (key == "paths.manifest") cfg.manifest = value;
        else if (key == "paths.taxonomy") cfg.taxonomy = value;
        else if (key == "paths.out") cfg.out = value;
        else if (key == "view") {
            if (value == "specific") cfg.view = taxonomy::ViewKind::specific;
            else if (value == "general") cfg.view = taxonomy::ViewKind::general;
            else throw std::invalid_argument("config: view must be specific or general");
        } else if (key == "support_threshold") cfg.support_threshold = to_long(key, value);
        else if (key == "binarize_threshold") cfg.binarize_threshold = to_double(key, value);
        else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
            cfg.seed_set = true;
        } else if (key == "preprocess.work_side") cfg.work_side = static_cast<int>(to_long(key, value));
        else if (key == "preprocess.min_area_fraction") cfg.mask_min_area_fraction = to_double(key, value);
        else if (key == "preprocess.crop_margin") cfg.crop_margin_fraction = to_double(key, value);
        else if (key == "split.train") cfg.split_fractions[0] = to_double(key, value);
        else if (key == "split.val") cfg.split_fractions[1] = to_double(key, value);
        else if (key == "split.test") cfg.split_fractions[2] = to_double(key, value);
        else if (key == "train.max_epochs") cfg.train.max_epochs = static_cast<int>(to_long(key, value));
        else if (key == "train.batch_size") cfg.train.batch_size = static_cast<int>(to_long(key, value));
        else if (key == "train.learning_rate") cfg.train.learning_rate = to_double(key, value);
        else if (key == "train.patience") cfg.train.patience = static_cast<int>(to_long(key, value));
        else if (key == "train.min_delta") cfg.train.min_delta = to_double(key, value);
        else if (key == "train.input_side") cfg.train.input_side = static_cast<int>(to_long(key, value));
        else if (key == "train.head_dim") cfg.train.head_dim = static_cast<int>(to_long(key, value));
        else if (key == "train.dropout") cfg.train.dropout = static_cast<float>(to_double(key, value));
        else if (key == "train.augment") cfg.train.augment_enabled = to_bool(key, value);
        else if (key == "augment.shear") cfg.train.augment.shear_range = to_double(key, value);
        else if (key == "augment.zoom_lo") cfg.train.augment.zoom_lo = to_double(key, value);
        else if (key == "augment.zoom_hi") cfg.train.augment.zoom_hi = to_double(key, value);
        else if (key == "augment.rotation_deg") cfg.train.augment.rotation_deg = to_double(key, value);
        else if (key == "augment.shift") cfg.train.augment.shift_fraction = to_double(key, value);
        else if (key == "augment.hflip_prob") cfg.train.augment.hflip_prob = to_double(key, value);
        else if (key == "augment.brightness_lo") cfg.train.augment.brightness_lo = to_double(key, value);
        else if (key == "augment.brightness_hi") cfg.train.augment.brightness_hi = to_double(key, value);
        else if (key == "augment.intensity_shift") cfg.train.augment.intensity_shift = to_double(key, value);
        else if (key == "synth.enabled") cfg.synth_enabled = to_bool(key, value);
        else if (key == "synth.count") cfg.synth.count = static_cast<int>(to_long(key, value));
        else if (key == "synth.side") cfg.synth.image_side = static_cast<int>(to_long(key, value));
        else if (key == "synth.patients") cfg.synth.patient_count = static_cast<int>(to_long(key, value));
        else if (key == "synth.prevalence") cfg.synth.prevalence = to_double_list(key, value);
        else if (key == "synth.cooc") cfg.synth.cooccurrence = to_cooc(key, value);
        else if (key == "explain.alpha") cfg.overlay.alpha = to_double(key, value);
        else if (key == "explain.heat_threshold") cfg.overlay.heat_threshold = to_double(key, value);
        else if (key == "explain.colormap") {
            if (value == "blue") cfg.overlay.colormap = explain::OverlayOptions::Colormap::blue;
            else if (value == "amber") cfg.overlay.colormap = explain::OverlayOptions::Colormap::amber;
            else throw std::invalid_argument("config: explain.colormap must be blue or amber");
        } else if (key == "explain.limit") cfg.explain_limit = static_cast<int>(to_long(key, value));
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    return cfg;
}

std::uint64_t RunConfig::config_hash() const {
    // FNV-1a over the canonical sorted key=value lines plus the seed
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [key, value] : raw) {
        mix(key);
        mix("=");
        mix(value);
        mix("\n");
    }
    mix("seed=" + std::to_string(seed));
    return h;
}

int thread_cap() {
    const char* env = std::getenv("IMLX_THREADS");
    if (!env || !*env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v <= 0) return 1;
    return static_cast<int>(v);
}

} // namespace imlx::runconfig
