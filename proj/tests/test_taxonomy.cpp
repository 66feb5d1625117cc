#include <doctest.h>

#include "imlx/taxonomy.hpp"

using namespace imlx;
using namespace imlx::taxonomy;

namespace {

const char* kFractureTree =
    "fracture\tclavicle fracture\n"
    "fracture\thumeral fracture\n"
    "fracture\tvertebral fracture\n"
    "fracture\trib fracture\n"
    "rib fracture\tcallus rib fracture\n";

std::vector<SampleRecord> make_records(const std::vector<std::set<std::string>>& label_sets) {
    std::vector<SampleRecord> records;
    for (std::size_t i = 0; i < label_sets.size(); ++i) {
        SampleRecord rec;
        rec.image_path = "img" + std::to_string(i) + ".pgm";
        rec.patient_id = "p" + std::to_string(i);
        rec.labels = label_sets[i];
        records.push_back(rec);
    }
    return records;
}

} // namespace

TEST_CASE("parse: fracture subtree has one root and six nodes") {
    const auto tree = parse_term_tree(kFractureTree);
    CHECK(tree.node_count() == 6);
    CHECK(tree.roots().size() == 1);
    CHECK(tree.names[tree.roots()[0]] == "fracture");
    CHECK(tree.contains("callus rib fracture"));
}

TEST_CASE("parse: empty input gives an empty tree") {
    const auto tree = parse_term_tree("");
    CHECK(tree.node_count() == 0);
}

TEST_CASE("parse: two-line cycle is rejected at line 2") {
    CHECK_THROWS_WITH_AS(parse_term_tree("a\tb\nb\ta\n"), doctest::Contains("line 2"),
                         std::invalid_argument);
}

TEST_CASE("parse: duplicate parent and empty names are rejected with line numbers") {
    CHECK_THROWS_WITH_AS(parse_term_tree("a\tc\nb\tc\n"), doctest::Contains("duplicate parent"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_term_tree("a\t\n"), doctest::Contains("empty name"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_term_tree("x\ty\nx\ty\tz\n"), doctest::Contains("line 2"),
                         std::invalid_argument);
}

TEST_CASE("parse: comments and isolated names") {
    const auto tree = parse_term_tree("# comment line\nnormal\nfracture\trib fracture\n");
    CHECK(tree.node_count() == 3);
    CHECK(tree.roots().size() == 2);
}

TEST_CASE("project: deep leaf rolls up to the root under the general view") {
    const auto tree = parse_term_tree(kFractureTree);
    const auto general = build_view(tree, ViewKind::general);
    REQUIRE(general.labels == std::vector<std::string>{"fracture"});
    const auto bits = project({"callus rib fracture"}, general);
    CHECK(bits == std::vector<std::uint8_t>{1});
}

TEST_CASE("project: empty set maps to the zero vector") {
    const auto tree = parse_term_tree(kFractureTree);
    const auto view = build_view(tree, ViewKind::specific);
    const auto bits = project({}, view);
    for (auto b : bits) CHECK(b == 0);
}

TEST_CASE("project: two siblings dedup to a single general bit") {
    const auto tree = parse_term_tree(kFractureTree);
    const auto general = build_view(tree, ViewKind::general);
    const auto bits = project({"clavicle fracture", "vertebral fracture"}, general);
    int total = 0;
    for (auto b : bits) total += b;
    CHECK(total == 1);
}

TEST_CASE("project: unknown names are rejected, idempotence holds") {
    const auto tree = parse_term_tree(kFractureTree);
    const auto general = build_view(tree, ViewKind::general);
    CHECK_THROWS_AS(project({"no such sign"}, general), std::invalid_argument);
    // projecting an already-general set is the identity
    const auto bits = project({"fracture"}, general);
    CHECK(bits == std::vector<std::uint8_t>{1});
}

TEST_CASE("specific view: intermediate signs are specific, grouping roots are not") {
    const auto tree = parse_term_tree(kFractureTree);
    const auto specific = build_view(tree, ViewKind::specific);
    CHECK(specific.labels == std::vector<std::string>{"callus rib fracture", "clavicle fracture",
                                                      "humeral fracture", "rib fracture",
                                                      "vertebral fracture"});
    const auto bits = project({"rib fracture"}, specific);
    int total = 0;
    for (auto b : bits) total += b;
    CHECK(total == 1);
}

TEST_CASE("nearest-parent grouping maps one level up") {
    const auto tree = parse_term_tree(kFractureTree);
    const auto mid = build_view(tree, ViewKind::general, GeneralGrouping::nearest_parent);
    CHECK(mid.labels == std::vector<std::string>{"fracture", "rib fracture"});
    const auto bits = project({"callus rib fracture"}, mid);
    CHECK(bits == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("filter_by_support: threshold is inclusive") {
    // counts A:250 B:199 C:200 with threshold 200 keeps {A, C}
    std::vector<std::set<std::string>> sets;
    for (int i = 0; i < 250; ++i) sets.push_back({"A"});
    for (int i = 0; i < 199; ++i) sets.push_back({"B"});
    for (int i = 0; i < 200; ++i) sets.push_back({"C"});
    const auto tree = parse_term_tree("A\nB\nC\n");
    const auto view = build_view(tree, ViewKind::specific);
    const auto result = filter_by_support(make_records(sets), view, 200);
    CHECK(result.view.labels == std::vector<std::string>{"A", "C"});
}

TEST_CASE("filter_by_support: minority-only samples are removed, mixed samples keep the rest") {
    std::vector<std::set<std::string>> sets;
    for (int i = 0; i < 5; ++i) sets.push_back({"A"});
    sets.push_back({"B"});        // minority-only: dropped
    sets.push_back({"A", "B"});   // mixed: stays as {A}
    sets.push_back({});           // unlabeled from the start: stays all-negative
    const auto tree = parse_term_tree("A\nB\n");
    const auto view = build_view(tree, ViewKind::specific);
    const auto result = filter_by_support(make_records(sets), view, 5);
    CHECK(result.view.labels == std::vector<std::string>{"A"});
    CHECK(result.records.size() == 7); // 5 pure A + mixed + unlabeled
    for (const auto& rec : result.records) CHECK(rec.labels.count("B") == 0);
    CHECK(result.stats.positive_counts == std::vector<long>{6});
}

TEST_CASE("filter_by_support: raising the threshold never adds labels or samples") {
    Rng rng(3);
    std::vector<std::set<std::string>> sets;
    for (int i = 0; i < 300; ++i) {
        std::set<std::string> s;
        if (rng.bernoulli(0.5)) s.insert("A");
        if (rng.bernoulli(0.2)) s.insert("B");
        if (rng.bernoulli(0.05)) s.insert("C");
        sets.push_back(s);
    }
    const auto tree = parse_term_tree("A\nB\nC\n");
    const auto view = build_view(tree, ViewKind::specific);
    std::size_t prev_labels = view.labels.size() + 1, prev_records = sets.size() + 1;
    for (long threshold : {1L, 10L, 50L, 120L}) {
        const auto result = filter_by_support(make_records(sets), view, threshold);
        CHECK(result.view.labels.size() <= prev_labels);
        CHECK(result.records.size() <= prev_records);
        prev_labels = result.view.labels.size();
        prev_records = result.records.size();

        // count conservation: bits over pruned manifest equal retained stats
        std::vector<long> counts(result.view.labels.size(), 0);
        for (const auto& rec : result.records) {
            const auto bits = project(rec.labels, result.view);
            for (std::size_t c = 0; c < bits.size(); ++c) counts[c] += bits[c];
        }
        CHECK(counts == result.stats.positive_counts);
    }
}

TEST_CASE("view determinism: two parses give identical orderings") {
    const auto a = build_view(parse_term_tree(kFractureTree), ViewKind::specific);
    const auto b = build_view(parse_term_tree(kFractureTree), ViewKind::specific);
    CHECK(a.labels == b.labels);
}

TEST_CASE("label_weights: formula and clamps") {
    LabelStats stats;
    stats.total_samples = 1000;
    stats.positive_counts = {50, 500};
    auto cfg = label_weights(stats);
    CHECK(cfg.positive_weights[0] == doctest::Approx(19.0));
    CHECK(cfg.positive_weights[1] == doctest::Approx(1.0));

    stats.positive_counts = {1000};
    CHECK(label_weights(stats).positive_weights[0] == doctest::Approx(1.0)); // lower clamp

    stats.positive_counts = {5};
    CHECK(label_weights(stats).positive_weights[0] == doctest::Approx(100.0)); // upper clamp

    stats.positive_counts = {0};
    CHECK(label_weights(stats).positive_weights[0] == doctest::Approx(100.0));
}
