#include "imlx/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "imlx/image_io.hpp"

namespace imlx::trainer {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max epochs must be >= 1");
    if (patience >= max_epochs)
        throw std::invalid_argument("TrainConfig: patience must be below max epochs");
    if (input_side < 4 || input_side % 4 != 0)
        throw std::invalid_argument("TrainConfig: input side must be divisible by 4");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
}

EnsembleSpec EnsembleSpec::standard(std::uint64_t master_seed) {
    static constexpr int kFilters[5][2] = {{8, 16}, {12, 16}, {8, 24}, {16, 16}, {12, 24}};
    EnsembleSpec spec;
    for (int i = 0; i < 5; ++i) {
        MemberSpec m;
        m.name = "member_" + std::to_string(i);
        m.conv1_filters = kFilters[i][0];
        m.conv2_filters = kFilters[i][1];
        m.seed = mix_seed(master_seed, static_cast<std::uint64_t>(i));
        spec.members.push_back(std::move(m));
    }
    return spec;
}

void EnsembleSpec::validate() const {
    if (members.size() != 5) throw std::invalid_argument("EnsembleSpec: exactly 5 members required");
    for (std::size_t i = 0; i < members.size(); ++i)
        for (std::size_t j = i + 1; j < members.size(); ++j)
            if (members[i].seed == members[j].seed)
                throw std::invalid_argument("EnsembleSpec: member seeds must be distinct");
}

EarlyStopState early_stop_update(double best, double current, int counter, double min_delta,
                                 int patience) {
    EarlyStopState out;
    if (best - current > min_delta) {
        out.best = current;
        out.counter = 0;
    } else {
        out.best = best;
        out.counter = counter + 1;
    }
    out.stop = out.counter >= patience;
    return out;
}

namespace {

Tensor batch_tensor(const std::vector<const Image*>& images, int side) {
    const int n = static_cast<int>(images.size());
    Tensor batch({n, 1, side, side});
    for (int i = 0; i < n; ++i) {
        const Image& img = *images[i];
        if (img.height != side || img.width != side)
            throw std::invalid_argument("trainer: image size " + std::to_string(img.height) + "x" +
                                        std::to_string(img.width) + " does not match input side " +
                                        std::to_string(side));
        std::copy(img.pixels.begin(), img.pixels.end(),
                  batch.ptr() + static_cast<std::size_t>(i) * side * side);
    }
    return batch;
}

Tensor batch_targets(const DataSet& data, const std::vector<std::size_t>& idx, std::size_t lo,
                     std::size_t hi, int label_count) {
    Tensor t({static_cast<int>(hi - lo), label_count});
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& bits = data.labels[idx[i]];
        for (int c = 0; c < label_count; ++c)
            t[static_cast<std::size_t>(i - lo) * label_count + c] = bits[c] ? 1.0f : 0.0f;
    }
    return t;
}

double eval_loss(const nn::RefNetParams& params, const DataSet& data,
                 const nn::LossConfig& loss_cfg, int batch_size, nn::ForwardResult& workspace) {
    const int L = static_cast<int>(loss_cfg.label_count());
    Rng unused(0);
    double weighted_sum = 0.0;
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
        const std::size_t hi = std::min(data.size(), lo + batch_size);
        std::vector<const Image*> ptrs;
        ptrs.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&data.images[i]);
        nn::forward_into(params, batch_tensor(ptrs, params.input_side), nn::Mode::eval, unused,
                         workspace);
        auto targets = batch_targets(data, idx, lo, hi, L);
        const double loss = nn::weighted_bce_logits(workspace.logits, targets, loss_cfg).loss;
        weighted_sum += loss * static_cast<double>(hi - lo);
    }
    return weighted_sum / static_cast<double>(data.size());
}

} // namespace

Checkpoint train_model(const TrainConfig& config, const DataSet& train_set, const DataSet& val_set,
                       const MemberSpec& member, const nn::LossConfig& loss_cfg,
                       const std::vector<std::string>& label_names) {
    config.validate();
    if (train_set.size() == 0 || val_set.size() == 0)
        throw std::invalid_argument("train_model: train and validation sets must be non-empty");
    const int L = loss_cfg.label_count();
    if (static_cast<int>(label_names.size()) != L)
        throw std::invalid_argument("train_model: label names do not match loss weights");
    for (const auto& bits : train_set.labels)
        if (static_cast<int>(bits.size()) != L)
            throw std::invalid_argument("train_model: label vector width mismatch");

    nn::RefNetParams params = nn::RefNetParams::make(member.conv1_filters, member.conv2_filters,
                                                     config.head_dim, L, config.input_side,
                                                     config.dropout);
    Rng init_rng(mix_seed(member.seed, 0x1417));
    nn::he_init(params, init_rng);
    nn::AdamState adam = nn::AdamState::make(params, config.learning_rate);

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.member = member;
    ckpt.label_names = label_names;
    ckpt.loss_weights = loss_cfg.positive_weights;
    ckpt.best_val_loss = std::numeric_limits<double>::infinity();

    double stop_best = std::numeric_limits<double>::infinity();
    int stop_counter = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    const std::uint64_t shuffle_seed = mix_seed(member.seed, 0x5F0);
    const std::uint64_t augment_seed = mix_seed(member.seed, 0xA06);
    const std::uint64_t dropout_seed = mix_seed(member.seed, 0xD20);

    nn::ForwardResult workspace; // reused across batches and epochs

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order.data(), order.size());

        double batch_loss_sum = 0.0;
        long batch_count = 0;
        std::vector<Image> augmented;
        for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + config.batch_size);
            augmented.clear();
            augmented.reserve(hi - lo);
            std::vector<const Image*> ptrs;
            ptrs.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                const std::size_t sample = order[i];
                if (config.augment_enabled) {
                    const std::uint64_t stream =
                        (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(sample);
                    Rng aug_rng(mix_seed(augment_seed, stream));
                    augmented.push_back(dataset::augment(train_set.images[sample], config.augment,
                                                         aug_rng));
                    ptrs.push_back(&augmented.back());
                } else {
                    ptrs.push_back(&train_set.images[sample]);
                }
            }

            const std::uint64_t batch_stream =
                (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(lo);
            Rng drop_rng(mix_seed(dropout_seed, batch_stream));
            nn::forward_into(params, batch_tensor(ptrs, config.input_side), nn::Mode::train,
                             drop_rng, workspace);
            auto targets = batch_targets(train_set, order, lo, hi, L);
            auto lr = nn::weighted_bce_logits(workspace.logits, targets, loss_cfg);
            if (!std::isfinite(lr.loss))
                throw std::runtime_error("train_model: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(batch_count) + " (member " + member.name +
                                         ")");
            auto grads = nn::backward(params, workspace.cache, lr.dlogits);
            nn::adam_step(params, grads, adam);
            batch_loss_sum += lr.loss;
            ++batch_count;
        }
        ckpt.train_loss_history.push_back(batch_loss_sum / static_cast<double>(batch_count));

        const double val_loss =
            eval_loss(params, val_set, loss_cfg, config.batch_size, workspace);
        ckpt.val_loss_history.push_back(val_loss);
        if (val_loss < ckpt.best_val_loss) {
            ckpt.best_val_loss = val_loss;
            ckpt.best_epoch = epoch;
            ckpt.params = params;
        }

        const auto es = early_stop_update(stop_best, val_loss, stop_counter, config.min_delta,
                                          config.patience);
        stop_best = es.best;
        stop_counter = es.counter;
        if (es.stop) break;
    }
    return ckpt;
}

std::vector<Checkpoint> train_ensemble(const EnsembleSpec& spec, const TrainConfig& config,
                                       const DataSet& train_set, const DataSet& val_set,
                                       const nn::LossConfig& loss_cfg,
                                       const std::vector<std::string>& label_names, int threads) {
    spec.validate();
    const int member_count = static_cast<int>(spec.members.size());
    std::vector<Checkpoint> out(member_count);
    std::vector<std::string> errors(member_count);

    auto run_member = [&](int i) {
        try {
            out[i] = train_model(config, train_set, val_set, spec.members[i], loss_cfg, label_names);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    };

    if (threads <= 1) {
        for (int i = 0; i < member_count; ++i) run_member(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        const int workers = std::min(threads, member_count);
        std::mutex mu;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                while (true) {
                    std::size_t mine;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= static_cast<std::size_t>(member_count)) return;
                        mine = next++;
                    }
                    run_member(static_cast<int>(mine));
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    for (int i = 0; i < member_count; ++i)
        if (!errors[i].empty())
            throw std::runtime_error("train_ensemble: member " + spec.members[i].name +
                                     " failed: " + errors[i]);
    return out;
}

std::vector<float> predict(const Checkpoint& checkpoint, const std::vector<Image>& images,
                           int batch_size) {
    const int L = checkpoint.params.label_count;
    std::vector<float> probs(images.size() * static_cast<std::size_t>(L));
    Rng unused(0);
    for (std::size_t lo = 0; lo < images.size(); lo += batch_size) {
        const std::size_t hi = std::min(images.size(), lo + batch_size);
        std::vector<const Image*> ptrs;
        for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&images[i]);
        auto fr = nn::forward(checkpoint.params, batch_tensor(ptrs, checkpoint.params.input_side),
                              nn::Mode::eval, unused);
        for (std::size_t i = lo; i < hi; ++i) {
            for (int c = 0; c < L; ++c) {
                const double z = fr.logits[(i - lo) * L + c];
                const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                        : std::exp(z) / (1.0 + std::exp(z));
                probs[i * L + c] = static_cast<float>(p);
            }
        }
    }
    return probs;
}

namespace {

constexpr std::uint16_t kFormatVersion = 1;

void push_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void push_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

json augment_to_json(const dataset::AugmentConfig& a) {
    return json{{"shear_range", a.shear_range},
                {"zoom_lo", a.zoom_lo},
                {"zoom_hi", a.zoom_hi},
                {"rotation_deg", a.rotation_deg},
                {"shift_fraction", a.shift_fraction},
                {"hflip_prob", a.hflip_prob},
                {"brightness_lo", a.brightness_lo},
                {"brightness_hi", a.brightness_hi},
                {"intensity_shift", a.intensity_shift}};
}

dataset::AugmentConfig augment_from_json(const json& j) {
    dataset::AugmentConfig a;
    a.shear_range = j.at("shear_range");
    a.zoom_lo = j.at("zoom_lo");
    a.zoom_hi = j.at("zoom_hi");
    a.rotation_deg = j.at("rotation_deg");
    a.shift_fraction = j.at("shift_fraction");
    a.hflip_prob = j.at("hflip_prob");
    a.brightness_lo = j.at("brightness_lo");
    a.brightness_hi = j.at("brightness_hi");
    a.intensity_shift = j.at("intensity_shift");
    return a;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    ckpt.params.validate();
    json meta;
    meta["format"] = {{"name", "imlx-checkpoint"}, {"version", kFormatVersion}};
    meta["member"] = {{"name", ckpt.member.name},
                      {"conv1_filters", ckpt.member.conv1_filters},
                      {"conv2_filters", ckpt.member.conv2_filters},
                      {"seed", std::to_string(ckpt.member.seed)}};
    meta["net"] = {{"conv1_filters", ckpt.params.conv1_filters},
                   {"conv2_filters", ckpt.params.conv2_filters},
                   {"head_dim", ckpt.params.head_dim},
                   {"label_count", ckpt.params.label_count},
                   {"input_side", ckpt.params.input_side},
                   {"dropout", ckpt.params.dropout}};
    meta["config"] = {{"max_epochs", ckpt.config.max_epochs},
                      {"batch_size", ckpt.config.batch_size},
                      {"learning_rate", ckpt.config.learning_rate},
                      {"patience", ckpt.config.patience},
                      {"min_delta", ckpt.config.min_delta},
                      {"input_side", ckpt.config.input_side},
                      {"head_dim", ckpt.config.head_dim},
                      {"dropout", ckpt.config.dropout},
                      {"augment_enabled", ckpt.config.augment_enabled},
                      {"augment", augment_to_json(ckpt.config.augment)},
                      {"master_seed", std::to_string(ckpt.config.master_seed)}};
    meta["labels"] = ckpt.label_names;
    json weights = json::array();
    for (float w : ckpt.loss_weights) weights.push_back(static_cast<double>(w));
    meta["loss_weights"] = weights;
    meta["history"] = {{"train", ckpt.train_loss_history},
                       {"val", ckpt.val_loss_history},
                       {"best_epoch", ckpt.best_epoch},
                       {"best_val_loss", ckpt.best_val_loss}};

    const std::string meta_str = meta.dump();
    std::string out = "IMLX";
    push_u16(out, kFormatVersion);
    push_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;
    for (const auto& group : ckpt.params.groups()) {
        for (float v : *group.values) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
            push_u32(out, bits);
        }
    }
    atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 10 || bytes.compare(0, 4, "IMLX") != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const std::uint16_t version = static_cast<std::uint8_t>(bytes[4]) |
                                  (static_cast<std::uint8_t>(bytes[5]) << 8);
    if (version != kFormatVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t meta_len = 0;
    for (int i = 0; i < 4; ++i) meta_len |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[6 + i])) << (8 * i);
    if (bytes.size() < 10 + meta_len) throw std::runtime_error("checkpoint: truncated metadata");
    const json meta = json::parse(bytes.substr(10, meta_len));

    Checkpoint ckpt;
    const auto& net = meta.at("net");
    ckpt.params = nn::RefNetParams::make(net.at("conv1_filters"), net.at("conv2_filters"),
                                         net.at("head_dim"), net.at("label_count"),
                                         net.at("input_side"), net.at("dropout"));
    const auto& member = meta.at("member");
    ckpt.member.name = member.at("name");
    ckpt.member.conv1_filters = member.at("conv1_filters");
    ckpt.member.conv2_filters = member.at("conv2_filters");
    ckpt.member.seed = std::stoull(member.at("seed").get<std::string>());
    const auto& cfg = meta.at("config");
    ckpt.config.max_epochs = cfg.at("max_epochs");
    ckpt.config.batch_size = cfg.at("batch_size");
    ckpt.config.learning_rate = cfg.at("learning_rate");
    ckpt.config.patience = cfg.at("patience");
    ckpt.config.min_delta = cfg.at("min_delta");
    ckpt.config.input_side = cfg.at("input_side");
    ckpt.config.head_dim = cfg.at("head_dim");
    ckpt.config.dropout = cfg.at("dropout");
    ckpt.config.augment_enabled = cfg.at("augment_enabled");
    ckpt.config.augment = augment_from_json(cfg.at("augment"));
    ckpt.config.master_seed = std::stoull(cfg.at("master_seed").get<std::string>());
    ckpt.label_names = meta.at("labels").get<std::vector<std::string>>();
    for (const auto& w : meta.at("loss_weights")) ckpt.loss_weights.push_back(w.get<float>());
    const auto& hist = meta.at("history");
    ckpt.train_loss_history = hist.at("train").get<std::vector<double>>();
    ckpt.val_loss_history = hist.at("val").get<std::vector<double>>();
    ckpt.best_epoch = hist.at("best_epoch");
    ckpt.best_val_loss = hist.at("best_val_loss");

    const std::size_t param_bytes = ckpt.params.total_size() * 4;
    if (bytes.size() != 10 + meta_len + param_bytes)
        throw std::runtime_error("checkpoint: parameter block size mismatch in " + path.string());
    std::size_t pos = 10 + meta_len;
    for (auto& group : ckpt.params.groups()) {
        for (float& v : *group.values) {
            std::uint32_t bits = 0;
            for (int i = 0; i < 4; ++i)
                bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
            v = std::bit_cast<float>(bits);
            pos += 4;
        }
    }
    return ckpt;
}

} // namespace imlx::trainer
