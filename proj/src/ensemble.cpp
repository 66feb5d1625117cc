#include "imlx/ensemble.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "imlx/image_io.hpp"

namespace imlx::ensemble {

namespace {

void check_aligned(const std::vector<PredictionMatrix>& members) {
    if (members.empty()) throw std::invalid_argument("ensemble: at least one member required");
    const auto& first = members.front();
    for (const auto& m : members) {
        if (m.sample_ids != first.sample_ids || m.labels != first.labels)
            throw std::invalid_argument("ensemble: member matrices are not aligned");
        if (m.values.size() != first.values.size())
            throw std::invalid_argument("ensemble: member matrix sizes disagree");
    }
}

EnsembleOutput base_output(const std::vector<PredictionMatrix>& members, const char* method) {
    EnsembleOutput out;
    out.method = method;
    out.sample_ids = members.front().sample_ids;
    out.labels = members.front().labels;
    out.member_count = static_cast<int>(members.size());
    out.scores.assign(members.front().values.size(), 0.0f);
    out.agreement.assign(members.front().values.size(), 0);
    return out;
}

void fill_agreement(const std::vector<PredictionMatrix>& members, double threshold,
                    std::vector<int>& agreement) {
    for (const auto& m : members)
        for (std::size_t i = 0; i < m.values.size(); ++i)
            if (m.values[i] >= threshold) agreement[i] += 1;
}

} // namespace

std::vector<std::uint8_t> binarize(const std::vector<float>& probs, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("binarize: threshold must lie in (0,1)");
    std::vector<std::uint8_t> bits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) bits[i] = probs[i] >= threshold ? 1 : 0;
    return bits;
}

EnsembleOutput ctp(const std::vector<PredictionMatrix>& members, double threshold) {
    check_aligned(members);
    EnsembleOutput out = base_output(members, "ctp");
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t i = 0; i < out.scores.size(); ++i) {
        double sum = 0.0;
        for (const auto& m : members) sum += m.values[i];
        out.scores[i] = static_cast<float>(sum * inv);
    }
    fill_agreement(members, threshold, out.agreement);
    return out;
}

EnsembleOutput ptc_lw(const std::vector<PredictionMatrix>& members, double threshold) {
    check_aligned(members);
    EnsembleOutput out = base_output(members, "ptc_lw");
    fill_agreement(members, threshold, out.agreement);
    const int m = static_cast<int>(members.size());
    for (std::size_t i = 0; i < out.scores.size(); ++i)
        out.scores[i] = 2 * out.agreement[i] > m ? 1.0f : 0.0f;
    return out;
}

EnsembleOutput ptc_mode(const std::vector<PredictionMatrix>& members, double threshold) {
    check_aligned(members);
    EnsembleOutput out = base_output(members, "ptc_mode");
    fill_agreement(members, threshold, out.agreement);

    const int N = members.front().rows();
    const int L = members.front().cols();
    for (int n = 0; n < N; ++n) {
        // frequency of each predicted label set; std::map iterates sorted
        // index sequences in lexicographic order, which settles ties
        std::map<std::vector<int>, int> freq;
        for (const auto& m : members) {
            std::vector<int> set;
            for (int c = 0; c < L; ++c)
                if (m.at(n, c) >= threshold) set.push_back(c);
            freq[set] += 1;
        }
        const std::vector<int>* winner = nullptr;
        int best = 0;
        for (const auto& [set, count] : freq) {
            if (count > best) {
                best = count;
                winner = &set;
            }
        }
        for (int c : *winner) out.scores[static_cast<std::size_t>(n) * L + c] = 1.0f;
    }
    return out;
}

namespace {

std::string format_matrix_csv(const std::vector<std::string>& sample_ids,
                              const std::vector<std::string>& labels,
                              const std::vector<float>& values, bool integer) {
    std::string out = "sample_id";
    for (const auto& l : labels) out += "," + l;
    out += "\n";
    char buf[32];
    const std::size_t L = labels.size();
    for (std::size_t n = 0; n < sample_ids.size(); ++n) {
        out += sample_ids[n];
        for (std::size_t c = 0; c < L; ++c) {
            const float v = values[n * L + c];
            if (integer) std::snprintf(buf, sizeof buf, ",%d", static_cast<int>(v));
            else std::snprintf(buf, sizeof buf, ",%.6f", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace

void write_prediction_csv(const std::filesystem::path& path, const PredictionMatrix& matrix) {
    atomic_write(path, format_matrix_csv(matrix.sample_ids, matrix.labels, matrix.values, false));
}

PredictionMatrix read_prediction_csv(const std::filesystem::path& path, const std::string& system) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("predictions: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("predictions: empty file " + path.string());
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();

    PredictionMatrix matrix;
    matrix.system = system;
    std::size_t start = line.find(',');
    if (line.substr(0, start) != "sample_id")
        throw std::runtime_error("predictions: bad header in " + path.string());
    while (start != std::string::npos) {
        std::size_t next = line.find(',', start + 1);
        matrix.labels.push_back(next == std::string::npos ? line.substr(start + 1)
                                                          : line.substr(start + 1, next - start - 1));
        start = next;
    }

    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        std::size_t pos = line.find(',');
        matrix.sample_ids.push_back(line.substr(0, pos));
        int fields = 0;
        while (pos != std::string::npos) {
            std::size_t next = line.find(',', pos + 1);
            const std::string cell = next == std::string::npos
                                         ? line.substr(pos + 1)
                                         : line.substr(pos + 1, next - pos - 1);
            matrix.values.push_back(std::stof(cell));
            ++fields;
            pos = next;
        }
        if (fields != matrix.cols())
            throw std::runtime_error("predictions: ragged row in " + path.string());
    }
    return matrix;
}

void write_ensemble_csv(const std::filesystem::path& path, const EnsembleOutput& output) {
    atomic_write(path, format_matrix_csv(output.sample_ids, output.labels, output.scores,
                                         output.method != "ctp"));
}

void write_agreement_csv(const std::filesystem::path& path, const EnsembleOutput& output) {
    std::vector<float> counts(output.agreement.begin(), output.agreement.end());
    atomic_write(path, format_matrix_csv(output.sample_ids, output.labels, counts, true));
}

} // namespace imlx::ensemble
