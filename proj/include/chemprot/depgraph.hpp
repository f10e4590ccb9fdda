#pragma once

// Dependency graph over one sentence, shortest paths between mentions and the
// vertex/edge walk features derived from them.

#include <algorithm>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chemprot/corpus.hpp"
#include "chemprot/error.hpp"

namespace chemprot {

struct DepEdge {
    int head = 0;
    int dependent = 0;
    std::string label;
};

/// Edges keep their direction; traversal treats them as undirected.
class DepGraph {
public:
    explicit DepGraph(int node_count = 0) : adjacency_(static_cast<std::size_t>(node_count)) {}

    void add_edge(int head, int dependent, std::string label) {
        if (head == dependent) throw ValidationError("dependency self-loop at token " + std::to_string(head));
        if (head < 0 || dependent < 0 || head >= node_count() || dependent >= node_count()) {
            throw ValidationError("dependency edge endpoint out of range");
        }
        const int e = static_cast<int>(edges_.size());
        edges_.push_back({head, dependent, std::move(label)});
        insert_sorted(head, dependent, e);
        insert_sorted(dependent, head, e);
    }

    int node_count() const { return static_cast<int>(adjacency_.size()); }
    const std::vector<DepEdge>& edges() const { return edges_; }

    /// (neighbor, edge index) pairs sorted by neighbor index.
    const std::vector<std::pair<int, int>>& neighbors(int node) const {
        return adjacency_.at(static_cast<std::size_t>(node));
    }

private:
    void insert_sorted(int from, int to, int edge) {
        auto& adj = adjacency_[static_cast<std::size_t>(from)];
        adj.insert(std::upper_bound(adj.begin(), adj.end(), std::pair{to, edge}), {to, edge});
    }

    std::vector<DepEdge> edges_;
    std::vector<std::vector<std::pair<int, int>>> adjacency_;
};

/// One edge per token with a non-ROOT head.
inline DepGraph build_graph(const Sentence& sentence) {
    DepGraph g(sentence.size());
    for (int t = 0; t < sentence.size(); ++t) {
        const Token& tok = sentence.tokens[static_cast<std::size_t>(t)];
        if (tok.head != kRoot) g.add_edge(tok.head, t, tok.dep_label);
    }
    return g;
}

struct PathEdge {
    std::string label;
    bool with_arrow = true;  ///< traversed from head to dependent
};

/// nodes[0] is the start, nodes.back() the end; edges[i] joins nodes[i] and
/// nodes[i + 1].
struct DepPath {
    std::vector<int> nodes;
    std::vector<PathEdge> edges;

    std::size_t edge_count() const { return edges.size(); }
};

/// Breadth-first shortest path over undirected edges. Among equal-length
/// paths the lexicographically smallest node sequence wins. Returns nullopt
/// when the endpoints are disconnected; from == to gives a single-node path.
inline std::optional<DepPath> shortest_path(const DepGraph& g, int from, int to) {
    if (from < 0 || to < 0 || from >= g.node_count() || to >= g.node_count()) {
        throw ValidationError("shortest_path endpoint out of range");
    }
    // Distances to the target, then a greedy walk from the source taking the
    // smallest neighbor that is one step closer.
    std::vector<int> dist(static_cast<std::size_t>(g.node_count()), -1);
    std::deque<int> queue{to};
    dist[static_cast<std::size_t>(to)] = 0;
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop_front();
        for (auto [v, e] : g.neighbors(u)) {
            if (dist[static_cast<std::size_t>(v)] < 0) {
                dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                queue.push_back(v);
            }
        }
    }
    if (dist[static_cast<std::size_t>(from)] < 0) return std::nullopt;

    DepPath path;
    path.nodes.push_back(from);
    int cur = from;
    while (cur != to) {
        const int want = dist[static_cast<std::size_t>(cur)] - 1;
        for (auto [v, e] : g.neighbors(cur)) {
            if (dist[static_cast<std::size_t>(v)] == want) {
                const DepEdge& edge = g.edges()[static_cast<std::size_t>(e)];
                path.edges.push_back({edge.label, edge.head == cur});
                path.nodes.push_back(v);
                cur = v;
                break;
            }
        }
    }
    return path;
}

/// The span token whose head lies outside the span; the last token when
/// none or several qualify.
inline int mention_head(const Sentence& sentence, const Span& span) {
    int found = -1;
    for (int t = span.first; t <= span.last; ++t) {
        const int h = sentence.tokens.at(static_cast<std::size_t>(t)).head;
        if (h == kRoot || !span.contains(h)) {
            if (found >= 0) return span.last;
            found = t;
        }
    }
    return found >= 0 ? found : span.last;
}

enum class WordForm { Surface, Lemma };

/// Display word for every node of `path`. Nodes that are a mention's head
/// token show the whole mention text when one is given.
inline std::vector<std::string> path_words(const DepPath& path, const Sentence& sentence, WordForm form,
                                           const std::vector<std::pair<int, std::string>>& endpoint_text = {}) {
    std::vector<std::string> words;
    words.reserve(path.nodes.size());
    for (int n : path.nodes) {
        const Token& t = sentence.tokens.at(static_cast<std::size_t>(n));
        std::string w = form == WordForm::Lemma ? t.lemma : t.surface;
        for (const auto& [node, text] : endpoint_text) {
            if (node == n && !text.empty()) w = text;
        }
        words.push_back(std::move(w));
    }
    return words;
}

/// "Gemfibrozil ← nsubj ← inhibits → dobj → induction"
inline std::string render_path(const DepPath& path, const std::vector<std::string>& words) {
    if (path.nodes.empty()) return {};
    std::string out = words.at(0);
    for (std::size_t i = 0; i < path.edges.size(); ++i) {
        const char* arrow = path.edges[i].with_arrow ? " → " : " ← ";
        out += arrow;
        out += path.edges[i].label;
        out += arrow;
        out += words.at(i + 1);
    }
    return out;
}

struct VWalk {
    std::string from;
    std::string label;
    std::string to;
};

struct EWalk {
    std::string in_label;
    std::string word;
    std::string out_label;
};

inline std::string join_walk(const std::string& a, const std::string& b, const std::string& c,
                             const std::string& sep = " – ") {
    return a + sep + b + sep + c;
}

inline std::string to_string(const VWalk& w, const std::string& sep = " – ") {
    return join_walk(w.from, w.label, w.to, sep);
}

inline std::string to_string(const EWalk& w, const std::string& sep = " – ") {
    return join_walk(w.in_label, w.word, w.out_label, sep);
}

/// Two words and their dependency, one per path edge.
inline std::vector<VWalk> v_walks(const DepPath& path, const std::vector<std::string>& words) {
    std::vector<VWalk> out;
    for (std::size_t i = 0; i < path.edges.size(); ++i) {
        out.push_back({words.at(i), path.edges[i].label, words.at(i + 1)});
    }
    return out;
}

/// One word and its two path dependencies, one per interior node.
inline std::vector<EWalk> e_walks(const DepPath& path, const std::vector<std::string>& words) {
    std::vector<EWalk> out;
    for (std::size_t i = 1; i < path.edges.size(); ++i) {
        out.push_back({path.edges[i - 1].label, words.at(i), path.edges[i].label});
    }
    return out;
}

/// Shortest path between the head tokens of an instance's two mentions, or
/// an empty path when they are disconnected.
inline DepPath instance_path(const RelationInstance& inst) {
    const Sentence& s = inst.sentence();
    const DepGraph g = build_graph(s);
    const int from = mention_head(s, inst.chem().span);
    const int to = mention_head(s, inst.gene().span);
    if (auto p = shortest_path(g, from, to)) return *std::move(p);
    return {};
}

}  // namespace chemprot
