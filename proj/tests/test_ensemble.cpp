#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "imlx/ensemble.hpp"
#include "imlx/rng.hpp"

using namespace imlx;
using namespace imlx::ensemble;

namespace {

PredictionMatrix matrix_from(const std::vector<float>& values, int n, int l,
                             const std::string& name = "m") {
    PredictionMatrix m;
    m.system = name;
    for (int i = 0; i < n; ++i) m.sample_ids.push_back("s" + std::to_string(i));
    for (int c = 0; c < l; ++c) m.labels.push_back("label_" + std::to_string(c));
    m.values = values;
    return m;
}

// ---- independent brute-force implementations of the three rules ----

std::vector<float> brute_ctp(const std::vector<std::vector<std::uint8_t>>& member_bits, int l) {
    std::vector<float> out(l, 0.0f);
    for (int c = 0; c < l; ++c) {
        double sum = 0.0;
        for (const auto& bits : member_bits) sum += bits[c];
        out[c] = static_cast<float>(sum / static_cast<double>(member_bits.size()));
    }
    return out;
}

std::vector<std::uint8_t> brute_lw(const std::vector<std::vector<std::uint8_t>>& member_bits,
                                   int l) {
    std::vector<std::uint8_t> out(l, 0);
    const int m = static_cast<int>(member_bits.size());
    for (int c = 0; c < l; ++c) {
        int votes = 0;
        for (const auto& bits : member_bits) votes += bits[c];
        out[c] = votes > m - votes ? 1 : 0; // strict majority, even ties negative
    }
    return out;
}

std::vector<std::uint8_t> brute_mode(const std::vector<std::vector<std::uint8_t>>& member_bits,
                                     int l) {
    // enumerate all candidate sets as bitmasks; best count wins; ties fall to
    // the lexicographically smallest sorted index sequence
    const int m = static_cast<int>(member_bits.size());
    auto to_mask = [l](const std::vector<std::uint8_t>& bits) {
        int mask = 0;
        for (int c = 0; c < l; ++c)
            if (bits[c]) mask |= 1 << c;
        return mask;
    };
    auto lex_sequence = [l](int mask) {
        std::vector<int> seq;
        for (int c = 0; c < l; ++c)
            if (mask & (1 << c)) seq.push_back(c);
        return seq;
    };
    int best_mask = -1, best_count = 0;
    for (int candidate = 0; candidate < (1 << l); ++candidate) {
        int count = 0;
        for (int i = 0; i < m; ++i)
            if (to_mask(member_bits[i]) == candidate) ++count;
        if (count == 0) continue;
        if (count > best_count ||
            (count == best_count && lex_sequence(candidate) < lex_sequence(best_mask))) {
            best_count = count;
            best_mask = candidate;
        }
    }
    std::vector<std::uint8_t> out(l, 0);
    for (int c = 0; c < l; ++c)
        if (best_mask & (1 << c)) out[c] = 1;
    return out;
}

} // namespace

TEST_CASE("binarize: boundary behaviour") {
    CHECK(binarize({0.5f}, 0.5)[0] == 1);
    CHECK(binarize({0.4999f}, 0.5)[0] == 0);
    CHECK(binarize({0.4f}, 0.3)[0] == 1);
    CHECK_THROWS_AS(binarize({0.5f}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(binarize({0.5f}, 1.0), std::invalid_argument);
}

TEST_CASE("ctp: mean of member probabilities, agreement from binarized votes") {
    std::vector<PredictionMatrix> members;
    const float probs[5] = {0.9f, 0.8f, 0.7f, 0.6f, 0.5f};
    for (int i = 0; i < 5; ++i) members.push_back(matrix_from({probs[i]}, 1, 1));
    const auto out = ctp(members);
    CHECK(out.scores[0] == doctest::Approx(0.7));
    CHECK(out.agreement[0] == 5); // all five clear 0.5

    // three of five vote positive
    std::vector<PredictionMatrix> mixed;
    const float mixed_probs[5] = {0.9f, 0.8f, 0.7f, 0.2f, 0.1f};
    for (int i = 0; i < 5; ++i) mixed.push_back(matrix_from({mixed_probs[i]}, 1, 1));
    CHECK(ctp(mixed).agreement[0] == 3);
}

TEST_CASE("ctp: identical members reproduce any member") {
    std::vector<PredictionMatrix> members(5, matrix_from({0.3f, 0.8f, 0.25f}, 1, 3));
    const auto out = ctp(members);
    for (int c = 0; c < 3; ++c) CHECK(out.scores[c] == doctest::Approx(members[0].values[c]));
}

TEST_CASE("ptc_lw: strict majority with even ties negative") {
    auto vote = [](std::vector<int> votes) {
        std::vector<PredictionMatrix> members;
        for (int v : votes) members.push_back(matrix_from({v ? 0.9f : 0.1f}, 1, 1));
        return ptc_lw(members).scores[0];
    };
    CHECK(vote({1, 1, 0, 0, 1}) == 1.0f);
    CHECK(vote({1, 0, 0, 0, 1}) == 0.0f);
    CHECK(vote({1, 1, 0, 0}) == 0.0f); // even tie
}

TEST_CASE("ptc_mode: set frequencies and the lexicographic tie rule") {
    auto run = [](const std::vector<std::vector<float>>& member_rows) {
        std::vector<PredictionMatrix> members;
        for (const auto& row : member_rows)
            members.push_back(matrix_from(std::vector<float>(row.begin(), row.end()), 1,
                                          static_cast<int>(row.size())));
        return ptc_mode(members).scores;
    };
    // sets {A},{A},{A,B},{B},{A} -> {A}
    CHECK(run({{0.9f, 0.1f}, {0.9f, 0.1f}, {0.9f, 0.9f}, {0.1f, 0.9f}, {0.9f, 0.1f}}) ==
          std::vector<float>{1.0f, 0.0f});
    // sets {A},{A},{B},{B},{C} -> {A} by the tie rule
    CHECK(run({{0.9f, 0.1f, 0.1f},
               {0.9f, 0.1f, 0.1f},
               {0.1f, 0.9f, 0.1f},
               {0.1f, 0.9f, 0.1f},
               {0.1f, 0.1f, 0.9f}}) == std::vector<float>{1.0f, 0.0f, 0.0f});
    // all members predict the empty set
    CHECK(run({{0.1f}, {0.2f}, {0.3f}}) == std::vector<float>{0.0f});
}

TEST_CASE("exhaustive oracle: all binary member predictions for M <= 4, L <= 3") {
    for (int m = 1; m <= 4; ++m) {
        for (int l = 1; l <= 3; ++l) {
            const int patterns = 1 << l;
            long combos = 1;
            for (int i = 0; i < m; ++i) combos *= patterns;
            for (long combo = 0; combo < combos; ++combo) {
                long rest = combo;
                std::vector<std::vector<std::uint8_t>> member_bits;
                std::vector<PredictionMatrix> members;
                for (int i = 0; i < m; ++i) {
                    const int mask = static_cast<int>(rest % patterns);
                    rest /= patterns;
                    std::vector<std::uint8_t> bits(l);
                    std::vector<float> probs(l);
                    for (int c = 0; c < l; ++c) {
                        bits[c] = (mask >> c) & 1;
                        probs[c] = bits[c] ? 1.0f : 0.0f;
                    }
                    member_bits.push_back(bits);
                    members.push_back(matrix_from(probs, 1, l));
                }

                const auto combined = ctp(members);
                const auto expect_ctp = brute_ctp(member_bits, l);
                for (int c = 0; c < l; ++c)
                    REQUIRE(combined.scores[c] == doctest::Approx(expect_ctp[c]).epsilon(1e-12));

                const auto lw = ptc_lw(members);
                const auto expect_lw = brute_lw(member_bits, l);
                for (int c = 0; c < l; ++c)
                    REQUIRE(lw.scores[c] == static_cast<float>(expect_lw[c]));

                const auto mode = ptc_mode(members);
                const auto expect_mode = brute_mode(member_bits, l);
                for (int c = 0; c < l; ++c)
                    REQUIRE(mode.scores[c] == static_cast<float>(expect_mode[c]));
            }
        }
    }
}

TEST_CASE("permutation symmetry: member order never changes any rule's output") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<PredictionMatrix> members;
        for (int i = 0; i < 5; ++i) {
            std::vector<float> values(4 * 3);
            for (auto& v : values) v = static_cast<float>(rng.uniform());
            members.push_back(matrix_from(values, 4, 3, "m" + std::to_string(i)));
        }
        auto shuffled = members;
        for (int i = 4; i > 0; --i)
            std::swap(shuffled[i], shuffled[rng.uniform_int(i + 1)]);
        CHECK(ctp(members).scores == ctp(shuffled).scores);
        CHECK(ctp(members).agreement == ctp(shuffled).agreement);
        CHECK(ptc_lw(members).scores == ptc_lw(shuffled).scores);
        CHECK(ptc_mode(members).scores == ptc_mode(shuffled).scores);
    }
}

TEST_CASE("unanimous members: all three rules binarize to the same set") {
    std::vector<PredictionMatrix> members(5, matrix_from({0.9f, 0.2f, 0.7f}, 1, 3));
    const auto a = ctp(members);
    const auto b = ptc_lw(members);
    const auto c = ptc_mode(members);
    const auto bits = binarize(a.scores, 0.5);
    for (int i = 0; i < 3; ++i) {
        CHECK(static_cast<float>(bits[i]) == b.scores[i]);
        CHECK(b.scores[i] == c.scores[i]);
    }
}

TEST_CASE("misaligned member matrices are rejected") {
    std::vector<PredictionMatrix> members = {matrix_from({0.5f, 0.5f}, 1, 2),
                                             matrix_from({0.5f}, 1, 1)};
    CHECK_THROWS_AS(ctp(members), std::invalid_argument);
    CHECK_THROWS_AS(ctp({}), std::invalid_argument);
}

TEST_CASE("prediction csv round trip at 6-decimal precision") {
    const auto dir = std::filesystem::temp_directory_path() / "imlx_ens_csv";
    std::filesystem::create_directories(dir);
    Rng rng(5);
    std::vector<float> values(6 * 4);
    for (auto& v : values) v = static_cast<float>(rng.uniform());
    const auto m = matrix_from(values, 6, 4, "member_0");
    write_prediction_csv(dir / "m.csv", m);
    const auto loaded = read_prediction_csv(dir / "m.csv", "member_0");
    REQUIRE(loaded.sample_ids == m.sample_ids);
    REQUIRE(loaded.labels == m.labels);
    for (std::size_t i = 0; i < values.size(); ++i)
        CHECK(loaded.values[i] == doctest::Approx(values[i]).epsilon(5e-6));
}
