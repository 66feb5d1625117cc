#include "imlx/taxonomy.hpp"

#include <algorithm>
#include <stdexcept>

namespace imlx::taxonomy {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line, const std::string& what) {
    throw std::invalid_argument("taxonomy line " + std::to_string(line) + ": " + what);
}

} // namespace

int TermTree::root_of(int node) const {
    int cur = node;
    while (parent[cur] >= 0) cur = parent[cur];
    return cur;
}

std::vector<int> TermTree::roots() const {
    std::vector<int> out;
    for (int i = 0; i < node_count(); ++i)
        if (is_root(i)) out.push_back(i);
    return out;
}

TermTree parse_term_tree(const std::string& text) {
    TermTree tree;
    auto intern = [&tree](const std::string& name) {
        auto it = tree.index.find(name);
        if (it != tree.index.end()) return it->second;
        const int id = tree.node_count();
        tree.index.emplace(name, id);
        tree.names.push_back(name);
        tree.parent.push_back(-1);
        tree.children.emplace_back();
        return id;
    };

    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;

        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;

        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(trim(line.substr(start)));
                break;
            }
            fields.push_back(trim(line.substr(start, tab - start)));
            start = tab + 1;
        }
        if (fields.size() > 2) fail(line_no, "expected at most one tab");

        if (fields.size() == 1) {
            if (fields[0].empty()) fail(line_no, "empty name");
            intern(fields[0]);
            continue;
        }

        if (fields[0].empty() || fields[1].empty()) fail(line_no, "empty name");
        const int p = intern(fields[0]);
        const int c = intern(fields[1]);
        if (p == c) fail(line_no, "cycle: '" + fields[0] + "' cannot parent itself");
        if (tree.parent[c] >= 0)
            fail(line_no, "duplicate parent for '" + fields[1] + "'");
        // adding p->c closes a cycle iff c is already an ancestor of p
        for (int cur = p; cur >= 0; cur = tree.parent[cur])
            if (cur == c) fail(line_no, "cycle involving '" + fields[1] + "'");
        tree.parent[c] = p;
        tree.children[p].push_back(c);
    }
    return tree;
}

LabelView build_view(const TermTree& tree, ViewKind kind, GeneralGrouping grouping) {
    LabelView view;
    view.kind = kind;
    for (const auto& name : tree.names) view.known_names.insert(name);

    std::vector<int> label_nodes;
    if (kind == ViewKind::specific) {
        // every sign below a grouping root, plus isolated names; grouping
        // roots themselves are not specific signs
        for (int i = 0; i < tree.node_count(); ++i)
            if (!tree.is_root(i) || !tree.has_children(i)) label_nodes.push_back(i);
    } else if (grouping == GeneralGrouping::root_ancestor) {
        for (int i = 0; i < tree.node_count(); ++i)
            if (tree.is_root(i)) label_nodes.push_back(i);
    } else {
        // nearest-parent grouping: every parent node is a label, isolated
        // names keep themselves
        for (int i = 0; i < tree.node_count(); ++i)
            if (tree.has_children(i) || tree.is_root(i)) label_nodes.push_back(i);
    }

    std::vector<std::string> names;
    names.reserve(label_nodes.size());
    for (int n : label_nodes) names.push_back(tree.names[n]);
    std::sort(names.begin(), names.end());
    view.labels = names;

    std::map<std::string, int> name_to_label;
    for (int i = 0; i < static_cast<int>(names.size()); ++i) name_to_label[names[i]] = i;

    if (kind == ViewKind::specific) {
        for (int n : label_nodes) view.node_to_index[tree.names[n]] = name_to_label[tree.names[n]];
    } else {
        for (int i = 0; i < tree.node_count(); ++i) {
            int target;
            if (grouping == GeneralGrouping::root_ancestor) {
                target = tree.root_of(i);
            } else {
                target = name_to_label.count(tree.names[i]) ? i : tree.parent[i];
            }
            auto it = name_to_label.find(tree.names[target]);
            if (it != name_to_label.end()) view.node_to_index[tree.names[i]] = it->second;
        }
    }
    return view;
}

std::vector<std::uint8_t> project(const std::set<std::string>& sample_labels,
                                  const LabelView& view) {
    std::vector<std::uint8_t> bits(view.labels.size(), 0);
    for (const auto& name : sample_labels) {
        auto it = view.node_to_index.find(name);
        if (it != view.node_to_index.end()) {
            bits[it->second] = 1;
        } else if (!view.known_names.count(name)) {
            throw std::invalid_argument("project: unknown label '" + name + "'");
        }
        // known but not mapped: dropped from this view
    }
    return bits;
}

FilterResult filter_by_support(const std::vector<SampleRecord>& records, const LabelView& view,
                               long threshold) {
    if (threshold < 1) throw std::invalid_argument("filter_by_support: threshold must be >= 1");

    std::vector<long> counts(view.labels.size(), 0);
    std::vector<std::vector<std::uint8_t>> projected;
    projected.reserve(records.size());
    for (const auto& rec : records) {
        projected.push_back(project(rec.labels, view));
        const auto& bits = projected.back();
        for (std::size_t c = 0; c < bits.size(); ++c) counts[c] += bits[c];
    }

    std::vector<int> retained;
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] >= threshold) retained.push_back(static_cast<int>(c));

    FilterResult out;
    out.view.kind = view.kind;
    out.view.known_names = view.known_names;
    std::vector<int> old_to_new(view.labels.size(), -1);
    for (std::size_t i = 0; i < retained.size(); ++i) {
        old_to_new[retained[i]] = static_cast<int>(i);
        out.view.labels.push_back(view.labels[retained[i]]);
        out.stats.positive_counts.push_back(counts[retained[i]]);
    }
    for (const auto& [name, idx] : view.node_to_index)
        if (old_to_new[idx] >= 0) out.view.node_to_index[name] = old_to_new[idx];

    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& bits = projected[i];
        bool any_retained = false;
        for (int c : retained)
            if (bits[c]) { any_retained = true; break; }
        if (!records[i].labels.empty() && !any_retained) continue; // minority-only sample
        SampleRecord rec = records[i];
        std::set<std::string> kept;
        for (const auto& name : rec.labels)
            if (out.view.node_to_index.count(name)) kept.insert(name);
        rec.labels = std::move(kept);
        out.records.push_back(std::move(rec));
    }
    out.stats.total_samples = static_cast<long>(out.records.size());
    return out;
}

nn::LossConfig label_weights(const LabelStats& stats) {
    if (stats.total_samples <= 0)
        throw std::invalid_argument("label_weights: total sample count must be > 0");
    std::vector<float> weights;
    weights.reserve(stats.positive_counts.size());
    for (long n : stats.positive_counts) {
        if (n <= 0) {
            weights.push_back(100.0f);
            continue;
        }
        const double raw = static_cast<double>(stats.total_samples - n) / static_cast<double>(n);
        weights.push_back(static_cast<float>(std::clamp(raw, 1.0, 100.0)));
    }
    return nn::LossConfig(std::move(weights));
}

} // namespace imlx::taxonomy
