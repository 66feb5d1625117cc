#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace imlx::metrics {

struct AucResult {
    double value = 0.5;
    bool degenerate = false; // no positives or no negatives in the truth
};

// Mann-Whitney AUC with midrank tie handling:
// (wins + 0.5 * ties over all positive/negative pairs) / (P * N).
AucResult auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth);

// Fraction of mismatched bits.
double hamming_loss(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);

enum class F1Mode { macro_pos_neg, positive_only };

// Default: unweighted mean of positive-class and negative-class F1; a class
// absent from both prediction and truth contributes F1 = 1 for its side.
// positive_only scores the positive class alone.
double f1_label(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                F1Mode mode = F1Mode::macro_pos_neg);

struct SystemScores {
    std::string name;
    std::vector<float> scores; // N x L; probabilities or already-binary
};

struct ResultTable {
    std::vector<std::string> labels;
    std::vector<long> supports;
    std::vector<std::string> systems;
    // label-major: cell(label, system)
    std::vector<double> auc_values;
    std::vector<double> f1_values;
    std::vector<std::uint8_t> auc_degenerate;
    std::vector<double> global_auc;     // per system, macro mean
    std::vector<double> global_f1;      // per system, macro mean
    std::vector<double> hamming;        // per system, over the full matrix

    double auc_at(std::size_t label, std::size_t system) const {
        return auc_values[label * systems.size() + system];
    }
    double f1_at(std::size_t label, std::size_t system) const {
        return f1_values[label * systems.size() + system];
    }
};

// Per-label AUC and F1 for every system (F1 on predictions binarized at the
// threshold), macro-mean global row, per-system Hamming loss.
ResultTable build_result_table(const std::vector<std::uint8_t>& truth,
                               const std::vector<std::string>& labels,
                               const std::vector<SystemScores>& systems, double threshold = 0.5);

// CSV: label,support,<system>_auc,<system>_f1,... plus a __global__ row and
// reference-anchor footer comments. Hamming losses go to a sidecar CSV.
void write_result_table_csv(const std::filesystem::path& path, const ResultTable& table);
void write_hamming_csv(const std::filesystem::path& path, const ResultTable& table);

} // namespace imlx::metrics
