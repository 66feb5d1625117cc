#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "imlx/nn.hpp"
#include "imlx/record.hpp"

namespace imlx::taxonomy {

// Term tree: parent/child label pairs, acyclic, one parent per node.
struct TermTree {
    std::vector<std::string> names;
    std::map<std::string, int> index;
    std::vector<int> parent;                 // -1 for roots
    std::vector<std::vector<int>> children;

    int node_count() const { return static_cast<int>(names.size()); }
    bool contains(const std::string& name) const { return index.count(name) > 0; }
    bool is_root(int node) const { return parent[node] < 0; }
    bool has_children(int node) const { return !children[node].empty(); }
    int root_of(int node) const;
    std::vector<int> roots() const;
};

// Text format: one "parent<TAB>child" pair per line, '#' starts a comment,
// a line with no tab declares an isolated name.
TermTree parse_term_tree(const std::string& text);

enum class ViewKind { specific, general };

// Grouping used by the general view: roll every sign up to its root ancestor,
// or only one level up to its immediate parent.
enum class GeneralGrouping { root_ancestor, nearest_parent };

// Projection from sign names to an ordered label vector. Names known to the
// tree but absent from node_to_index are dropped by project(); anything else
// is rejected.
struct LabelView {
    ViewKind kind = ViewKind::specific;
    std::vector<std::string> labels;              // lexicographic order
    std::map<std::string, int> node_to_index;
    std::set<std::string> known_names;

    int label_count() const { return static_cast<int>(labels.size()); }
};

LabelView build_view(const TermTree& tree, ViewKind kind,
                     GeneralGrouping grouping = GeneralGrouping::root_ancestor);

// Binary label vector for one sample's sign names under a view.
std::vector<std::uint8_t> project(const std::set<std::string>& sample_labels,
                                  const LabelView& view);

struct LabelStats {
    std::vector<long> positive_counts;
    long total_samples = 0;
};

struct FilterResult {
    LabelView view;                    // restricted to retained labels
    std::vector<SampleRecord> records; // pruned manifest
    LabelStats stats;                  // counts for retained labels, N after pruning
};

// Keeps labels whose positive count over the manifest reaches the threshold
// (inclusive). Samples whose whole label set was removed are dropped; samples
// that never had labels stay as all-negative.
FilterResult filter_by_support(const std::vector<SampleRecord>& records, const LabelView& view,
                               long threshold = 200);

// w_c = clamp((N - n_c) / n_c, 1, 100); empty labels get the top weight.
nn::LossConfig label_weights(const LabelStats& stats);

} // namespace imlx::taxonomy
