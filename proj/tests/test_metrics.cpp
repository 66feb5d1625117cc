#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "imlx/image_io.hpp"
#include "imlx/metrics.hpp"
#include "imlx/rng.hpp"

using namespace imlx;
using namespace imlx::metrics;

namespace {

// O(P*N) pairwise oracle
double auc_pairwise(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!truth[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (truth[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

} // namespace

TEST_CASE("auc: separable, all-tied and the worked example") {
    CHECK(auc({0.1f, 0.2f, 0.8f, 0.9f}, {0, 0, 1, 1}).value == doctest::Approx(1.0));
    CHECK(auc({0.5f, 0.5f, 0.5f, 0.5f}, {0, 1, 0, 1}).value == doctest::Approx(0.5));
    CHECK(auc({0.1f, 0.4f, 0.35f, 0.8f}, {0, 0, 1, 1}).value == doctest::Approx(0.75));
}

TEST_CASE("auc: degenerate truth flags and returns 0.5") {
    const auto all_pos = auc({0.2f, 0.7f}, {1, 1});
    CHECK(all_pos.degenerate);
    CHECK(all_pos.value == doctest::Approx(0.5));
    const auto all_neg = auc({0.2f, 0.7f}, {0, 0});
    CHECK(all_neg.degenerate);
}

TEST_CASE("auc: matches the pairwise oracle within 1e-12 on 1000 tied instances") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(49));
        std::vector<float> scores(n);
        std::vector<std::uint8_t> truth(n);
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            // quantized scores force plenty of ties
            scores[i] = static_cast<float>(rng.uniform_int(8)) / 8.0f;
            truth[i] = rng.bernoulli(0.4) ? 1 : 0;
            has_pos |= truth[i] == 1;
            has_neg |= truth[i] == 0;
        }
        if (!has_pos || !has_neg) continue;
        const double fast = auc(scores, truth).value;
        const double slow = auc_pairwise(scores, truth);
        REQUIRE(std::abs(fast - slow) < 1e-12);
    }
}

TEST_CASE("auc properties: monotone invariance and complement") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 5 + static_cast<int>(rng.uniform_int(30));
        std::vector<float> scores(n);
        std::vector<std::uint8_t> truth(n), flipped(n);
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            scores[i] = static_cast<float>(rng.uniform());
            truth[i] = rng.bernoulli(0.5) ? 1 : 0;
            flipped[i] = truth[i] ? 0 : 1;
            has_pos |= truth[i] == 1;
            has_neg |= truth[i] == 0;
        }
        if (!has_pos || !has_neg) continue;
        std::vector<float> transformed(n);
        for (int i = 0; i < n; ++i)
            transformed[i] = std::exp(3.0f * scores[i]) + 1.0f; // strictly monotone
        CHECK(auc(scores, truth).value == doctest::Approx(auc(transformed, truth).value));
        CHECK(auc(scores, truth).value + auc(scores, flipped).value == doctest::Approx(1.0));
    }
}

TEST_CASE("hamming_loss: examples and symmetry") {
    CHECK(hamming_loss({1, 0, 1}, {1, 0, 1}) == doctest::Approx(0.0));
    CHECK(hamming_loss({1, 1, 0}, {1, 0, 1}) == doctest::Approx(2.0 / 3.0));
    Rng rng(3);
    std::vector<std::uint8_t> a(40), b(40);
    for (int i = 0; i < 40; ++i) {
        a[i] = rng.bernoulli(0.5);
        b[i] = rng.bernoulli(0.5);
    }
    CHECK(hamming_loss(a, b) == doctest::Approx(hamming_loss(b, a)));
}

TEST_CASE("hamming_loss: all-negative predictor scores the label prevalence") {
    Rng rng(9);
    std::vector<std::uint8_t> truth(200), zeros(200, 0);
    long positives = 0;
    for (auto& t : truth) {
        t = rng.bernoulli(0.3) ? 1 : 0;
        positives += t;
    }
    CHECK(hamming_loss(zeros, truth) ==
          doctest::Approx(static_cast<double>(positives) / 200.0));
}

TEST_CASE("f1_label: perfect prediction and the constant-negative closed form") {
    std::vector<std::uint8_t> truth = {1, 0, 1, 0};
    CHECK(f1_label(truth, truth) == doctest::Approx(1.0));

    // prevalence 3%: (1-p)/(2-p) with zero positive-side F1
    const int n = 1000, positives = 30;
    std::vector<std::uint8_t> t(n, 0), zeros(n, 0);
    for (int i = 0; i < positives; ++i) t[i] = 1;
    const double p = 0.03;
    CHECK(f1_label(zeros, t) == doctest::Approx((1.0 - p) / (2.0 - p)).epsilon(1e-9));
    CHECK(f1_label(zeros, t) == doctest::Approx(0.492385786802).epsilon(1e-9));
}

TEST_CASE("f1_label: a class absent from both sides contributes 1") {
    // no positives anywhere: positive side degenerate -> 1, negative perfect -> 1
    std::vector<std::uint8_t> zeros(10, 0);
    CHECK(f1_label(zeros, zeros) == doctest::Approx(1.0));
}

TEST_CASE("f1_label: the closed form reproduces non-learning scores at both extremes") {
    // constant-negative at prevalence 0.40 and 0.012: (1-p)/(2-p)
    auto run = [](int n, int positives) {
        std::vector<std::uint8_t> t(n, 0), zeros(n, 0);
        for (int i = 0; i < positives; ++i) t[i] = 1;
        return f1_label(zeros, t);
    };
    CHECK(run(1000, 400) == doctest::Approx(0.6 / 1.6).epsilon(1e-12)); // 0.375
    CHECK(run(1000, 12) == doctest::Approx(0.988 / 1.988).epsilon(1e-12)); // 0.497
}

TEST_CASE("f1_label: positive-only mode scores just the positive class") {
    std::vector<std::uint8_t> truth = {1, 1, 0, 0};
    std::vector<std::uint8_t> pred = {1, 0, 1, 0};
    // tp=1 fp=1 fn=1 -> 2/4
    CHECK(f1_label(pred, truth, F1Mode::positive_only) == doctest::Approx(0.5));
    std::vector<std::uint8_t> zeros(4, 0);
    CHECK(f1_label(zeros, truth, F1Mode::positive_only) == doctest::Approx(0.0));
}

TEST_CASE("result table: identical systems give identical columns, global is the macro mean") {
    // 2 labels, 4 samples
    std::vector<std::uint8_t> truth = {1, 0, 0, 1, 1, 0, 0, 0};
    std::vector<float> scores = {0.9f, 0.2f, 0.3f, 0.8f, 0.7f, 0.4f, 0.1f, 0.2f};
    std::vector<SystemScores> systems = {{"a", scores}, {"b", scores}};
    const auto table = build_result_table(truth, {"x", "y"}, systems, 0.5);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(table.auc_at(c, 0) == doctest::Approx(table.auc_at(c, 1)));
        CHECK(table.f1_at(c, 0) == doctest::Approx(table.f1_at(c, 1)));
    }
    CHECK(table.global_auc[0] ==
          doctest::Approx(0.5 * (table.auc_at(0, 0) + table.auc_at(1, 0))));
    CHECK(table.supports == std::vector<long>{2, 1});

    // macro mean example: per-label AUCs {0.8, 0.6} -> 0.7
    const double mean = (0.8 + 0.6) / 2.0;
    CHECK(mean == doctest::Approx(0.7));
}

TEST_CASE("result table csv: header, global row and the reference-anchor footer") {
    std::vector<std::uint8_t> truth = {1, 0, 0, 1};
    std::vector<float> scores = {0.9f, 0.2f, 0.3f, 0.8f};
    const auto table = build_result_table(truth, {"x", "y"}, {{"ctp", scores}}, 0.5);
    const auto dir = std::filesystem::temp_directory_path() / "imlx_metrics_csv";
    std::filesystem::create_directories(dir);
    write_result_table_csv(dir / "results.csv", table);
    write_hamming_csv(dir / "hamming.csv", table);
    const std::string csv = read_file(dir / "results.csv");
    CHECK(csv.find("label,support,ctp_auc,ctp_f1") == 0);
    CHECK(csv.find("__global__") != std::string::npos);
    CHECK(csv.find("0.840") != std::string::npos);
    CHECK(csv.find("0.819") != std::string::npos);
    const std::string sidecar = read_file(dir / "hamming.csv");
    CHECK(sidecar.find("system,hamming_loss") == 0);
    CHECK(sidecar.find("ctp,") != std::string::npos);
}
