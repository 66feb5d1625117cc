#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace imlx::ensemble {

// Per-model probabilities over samples x labels.
struct PredictionMatrix {
    std::string system;
    std::vector<std::string> sample_ids;
    std::vector<std::string> labels;
    std::vector<float> values; // N x L, row-major

    int rows() const { return static_cast<int>(sample_ids.size()); }
    int cols() const { return static_cast<int>(labels.size()); }
    float at(int n, int c) const { return values[static_cast<std::size_t>(n) * cols() + c]; }
};

// bit = 1 iff prob >= threshold
std::vector<std::uint8_t> binarize(const std::vector<float>& probs, double threshold = 0.5);

struct EnsembleOutput {
    std::string method; // ctp | ptc_lw | ptc_mode
    std::vector<std::string> sample_ids;
    std::vector<std::string> labels;
    std::vector<float> scores;  // probabilities for ctp, {0,1} for ptc
    std::vector<int> agreement; // positive votes per cell, of member_count
    int member_count = 0;

    float score(int n, int c) const {
        return scores[static_cast<std::size_t>(n) * labels.size() + c];
    }
};

// Combine-then-predict: mean probability per cell; agreement comes from each
// member's binarized prediction.
EnsembleOutput ctp(const std::vector<PredictionMatrix>& members, double threshold = 0.5);

// Label-wise vote: positive iff strictly more than half the members say so
// (even ties go negative).
EnsembleOutput ptc_lw(const std::vector<PredictionMatrix>& members, double threshold = 0.5);

// Set-wise mode: the most frequent predicted label set per sample wins; ties
// go to the lexicographically smallest sorted index sequence.
EnsembleOutput ptc_mode(const std::vector<PredictionMatrix>& members, double threshold = 0.5);

// CSV: header `sample_id,<label...>`, one row per sample, 6-decimal floats.
void write_prediction_csv(const std::filesystem::path& path, const PredictionMatrix& matrix);
PredictionMatrix read_prediction_csv(const std::filesystem::path& path, const std::string& system);

void write_ensemble_csv(const std::filesystem::path& path, const EnsembleOutput& output);
void write_agreement_csv(const std::filesystem::path& path, const EnsembleOutput& output);

} // namespace imlx::ensemble
