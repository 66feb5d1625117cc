#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imlx/dataset.hpp"
#include "imlx/image.hpp"
#include "imlx/nn.hpp"

namespace imlx::trainer {

struct TrainConfig {
    int max_epochs = 350;
    int batch_size = 32;
    double learning_rate = 1e-4;
    int patience = 25;
    double min_delta = 0.001;
    int input_side = 224;
    int head_dim = 512;
    float dropout = 0.2f;
    bool augment_enabled = true;
    dataset::AugmentConfig augment;
    std::uint64_t master_seed = 0;

    void validate() const;
};

struct MemberSpec {
    std::string name;
    int conv1_filters = 8;
    int conv2_filters = 16;
    std::uint64_t seed = 0;
};

// Five fixed (F1,F2) variants; member seed = master ^ golden*(index+1).
struct EnsembleSpec {
    std::vector<MemberSpec> members;

    static EnsembleSpec standard(std::uint64_t master_seed);
    void validate() const;
};

// Preprocessed samples ready for the network.
struct DataSet {
    std::vector<std::string> ids;
    std::vector<Image> images;                    // input_side squares in [0,1]
    std::vector<std::vector<std::uint8_t>> labels;

    std::size_t size() const { return images.size(); }
};

struct Checkpoint {
    nn::RefNetParams params; // snapshot at the best validation loss
    TrainConfig config;
    MemberSpec member;
    std::vector<std::string> label_names;
    std::vector<float> loss_weights;
    std::vector<double> train_loss_history;
    std::vector<double> val_loss_history;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

struct EarlyStopState {
    double best = 0.0;
    int counter = 0;
    bool stop = false;
};

// Improvement means best - current > min_delta; improvements reset the
// counter, anything else increments it, and the counter reaching the patience
// stops training.
EarlyStopState early_stop_update(double best, double current, int counter,
                                 double min_delta = 0.001, int patience = 25);

Checkpoint train_model(const TrainConfig& config, const DataSet& train_set, const DataSet& val_set,
                       const MemberSpec& member, const nn::LossConfig& loss_cfg,
                       const std::vector<std::string>& label_names);

// Members are independent; `threads` caps concurrent members (0 or 1 = serial).
// Results do not depend on the schedule.
std::vector<Checkpoint> train_ensemble(const EnsembleSpec& spec, const TrainConfig& config,
                                       const DataSet& train_set, const DataSet& val_set,
                                       const nn::LossConfig& loss_cfg,
                                       const std::vector<std::string>& label_names,
                                       int threads = 0);

// Sigmoid of eval-mode logits, N x L in (0,1).
std::vector<float> predict(const Checkpoint& checkpoint, const std::vector<Image>& images,
                           int batch_size = 32);

// Checkpoint container: "IMLX", u16 version, u32 metadata length, UTF-8 JSON
// metadata, then float32 little-endian parameter blocks in declared order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace imlx::trainer
