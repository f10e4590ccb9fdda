#pragma once

// Combining the three base models: majority voting over predicted labels, or
// a random-forest stacker over their concatenated per-class scores.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "chemprot/error.hpp"
#include "chemprot/labels.hpp"
#include "chemprot/random.hpp"
#include "chemprot/serialize.hpp"

namespace chemprot {

// ---------------------------------------------------------------------------
// Voting

/// A positive class predicted by at least two of the three models wins;
/// anything else is NEG. With `unanimous` all three must agree.
inline Label vote(Label svm, Label cnn, Label rnn, bool unanimous = false) {
    const std::array<Label, 3> v{svm, cnn, rnn};
    const int needed = unanimous ? 3 : 2;
    for (Label candidate : v) {
        if (candidate.is_negative()) continue;
        if (std::count(v.begin(), v.end(), candidate) >= needed) return candidate;
    }
    return kNegative;
}

// ---------------------------------------------------------------------------
// Meta-features

/// SVM scores (all classes) | CNN pre-softmax scores (all classes) | RNN
/// scores (positive classes).
class MetaFeatures {
public:
    static std::size_t expected_size(int class_count) {
        return static_cast<std::size_t>(2 * class_count + class_count - 1);
    }

    static std::vector<std::string> layout(const LabelSet& labels) {
        std::vector<std::string> names;
        for (const char* block : {"svm", "cnn"}) {
            for (const auto& l : labels.names()) names.push_back(std::string(block) + ":" + l);
        }
        for (int k = 0; k < labels.positive_count(); ++k) names.push_back("rnn:" + labels.name(labels.positive(k)));
        return names;
    }

    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    friend MetaFeatures build_meta_features(std::span<const double>, std::span<const double>, std::span<const double>);

private:
    std::vector<double> values_;
};

inline MetaFeatures build_meta_features(std::span<const double> svm_scores, std::span<const double> cnn_pre_softmax,
                                        std::span<const double> rnn_scores) {
    if (svm_scores.size() != cnn_pre_softmax.size() || rnn_scores.size() + 1 != svm_scores.size()) {
        throw ShapeError("meta-features: expected K SVM, K CNN and K-1 RNN scores, got " +
                         std::to_string(svm_scores.size()) + ", " + std::to_string(cnn_pre_softmax.size()) + ", " +
                         std::to_string(rnn_scores.size()));
    }
    MetaFeatures m;
    m.values_.reserve(svm_scores.size() * 2 + rnn_scores.size());
    m.values_.insert(m.values_.end(), svm_scores.begin(), svm_scores.end());
    m.values_.insert(m.values_.end(), cnn_pre_softmax.begin(), cnn_pre_softmax.end());
    m.values_.insert(m.values_.end(), rnn_scores.begin(), rnn_scores.end());
    return m;
}

// ---------------------------------------------------------------------------
// Random forest (CART, gini)

inline double gini(std::span<const double> histogram) {
    double total = 0.0;
    for (double c : histogram) total += c;
    if (total <= 0.0) return 0.0;
    double sq = 0.0;
    for (double c : histogram) sq += (c / total) * (c / total);
    return 1.0 - sq;
}

struct TreeNode {
    int feature = -1;  ///< -1 for leaves
    double threshold = 0.0;
    int left = -1;   ///< taken when value <= threshold
    int right = -1;
    std::vector<double> histogram;  ///< class counts of the training samples reaching this node

    bool is_leaf() const { return feature < 0; }
};

inline int argmax_index(std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

class DecisionTree {
public:
    std::vector<TreeNode>& nodes() { return nodes_; }
    const std::vector<TreeNode>& nodes() const { return nodes_; }
    std::vector<std::size_t>& bootstrap() { return bootstrap_; }
    const std::vector<std::size_t>& bootstrap() const { return bootstrap_; }

    int leaf_index(std::span<const double> x) const {
        int n = 0;
        while (!nodes_[static_cast<std::size_t>(n)].is_leaf()) {
            const TreeNode& node = nodes_[static_cast<std::size_t>(n)];
            n = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
        }
        return n;
    }

    int predict(std::span<const double> x) const {
        return argmax_index(nodes_[static_cast<std::size_t>(leaf_index(x))].histogram);
    }

private:
    std::vector<TreeNode> nodes_;
    std::vector<std::size_t> bootstrap_;  ///< sample indices drawn for this tree
};

struct ForestParams {
    int trees = 500;
    int features_per_split = 0;  ///< 0 -> floor(sqrt(feature count))
    bool bootstrap = true;
    int min_samples_split = 2;
    std::uint64_t seed = 1;
};

namespace detail {

class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& x, std::span<const int> y, int classes, int mtry,
                int min_split, Rng& rng)
        : x_(x), y_(y), classes_(classes), mtry_(mtry), min_split_(min_split), rng_(rng) {}

    DecisionTree build(std::vector<std::size_t> samples) {
        DecisionTree tree;
        tree.bootstrap() = samples;
        grow(tree, std::move(samples));
        return tree;
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double impurity = 0.0;
    };

    std::vector<double> histogram(const std::vector<std::size_t>& samples) const {
        std::vector<double> h(static_cast<std::size_t>(classes_), 0.0);
        for (std::size_t s : samples) h[static_cast<std::size_t>(y_[s])] += 1.0;
        return h;
    }

    /// Best midpoint threshold on one feature by weighted child gini.
    void scan_feature(int f, const std::vector<std::size_t>& samples, const std::vector<double>& total,
                      Split& best) const {
        std::vector<std::pair<double, int>> vals;
        vals.reserve(samples.size());
        for (std::size_t s : samples) vals.emplace_back(x_[s][static_cast<std::size_t>(f)], y_[s]);
        std::sort(vals.begin(), vals.end());
        std::vector<double> left(static_cast<std::size_t>(classes_), 0.0);
        std::vector<double> right = total;
        const double n = static_cast<double>(vals.size());
        for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
            left[static_cast<std::size_t>(vals[i].second)] += 1.0;
            right[static_cast<std::size_t>(vals[i].second)] -= 1.0;
            if (vals[i].first == vals[i + 1].first) continue;
            const double nl = static_cast<double>(i + 1);
            const double impurity = (nl * gini(left) + (n - nl) * gini(right)) / n;
            if (best.feature < 0 || impurity < best.impurity) {
                best.feature = f;
                best.impurity = impurity;
                best.threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                // Guard against the midpoint rounding onto the upper value.
                if (!(best.threshold < vals[i + 1].first)) best.threshold = vals[i].first;
            }
        }
    }

    int grow(DecisionTree& tree, std::vector<std::size_t> samples) {
        const int index = static_cast<int>(tree.nodes().size());
        tree.nodes().push_back({});
        std::vector<double> hist = histogram(samples);
        const double parent = gini(hist);
        tree.nodes()[static_cast<std::size_t>(index)].histogram = hist;
        if (parent <= 0.0 || static_cast<int>(samples.size()) < min_split_) return index;

        const int d = static_cast<int>(x_.front().size());
        std::vector<std::size_t> features = rng_.permutation(static_cast<std::size_t>(d));
        Split best;
        // Sampled features first; if none of them lowers impurity, keep
        // scanning the remaining ones in the same random order.
        for (int k = 0; k < d; ++k) {
            scan_feature(static_cast<int>(features[static_cast<std::size_t>(k)]), samples, hist, best);
            if (k + 1 >= mtry_ && best.feature >= 0 && best.impurity < parent) break;
        }
        if (best.feature < 0 || !(best.impurity < parent)) return index;

        std::vector<std::size_t> left, right;
        for (std::size_t s : samples) {
            (x_[s][static_cast<std::size_t>(best.feature)] <= best.threshold ? left : right).push_back(s);
        }
        samples.clear();
        samples.shrink_to_fit();
        const int l = grow(tree, std::move(left));
        const int r = grow(tree, std::move(right));
        TreeNode& node = tree.nodes()[static_cast<std::size_t>(index)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = l;
        node.right = r;
        return index;
    }

    const std::vector<std::vector<double>>& x_;
    std::span<const int> y_;
    int classes_;
    int mtry_;
    int min_split_;
    Rng& rng_;
};

}  // namespace detail

class RandomForest {
public:
    RandomForest() = default;
    RandomForest(int class_count, std::vector<std::string> feature_names)
        : class_count_(class_count), feature_names_(std::move(feature_names)) {}

    static RandomForest train(const std::vector<std::vector<double>>& x, std::span<const Label> labels,
                              int class_count, std::vector<std::string> feature_names, const ForestParams& params) {
        if (x.empty()) throw ValidationError("rf_train: empty training set");
        if (x.size() != labels.size()) throw ShapeError("rf_train: features and labels differ in length");
        const std::size_t d = feature_names.size();
        for (const auto& row : x) {
            if (row.size() != d) throw ShapeError("rf_train: feature vector length mismatch");
        }
        if (params.trees < 1) throw ConfigError("rf_train: tree count must be >= 1");
        std::vector<int> y;
        y.reserve(labels.size());
        for (Label l : labels) {
            if (l.id < 0 || l.id >= class_count) throw ValidationError("rf_train: label out of range");
            y.push_back(l.id);
        }
        const int mtry = params.features_per_split > 0
                             ? params.features_per_split
                             : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
        RandomForest forest(class_count, std::move(feature_names));
        forest.trees_.reserve(static_cast<std::size_t>(params.trees));
        for (int t = 0; t < params.trees; ++t) {
            // Per-tree stream: results do not depend on the order trees are built.
            Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
            std::vector<std::size_t> sample(x.size());
            if (params.bootstrap) {
                for (auto& s : sample) s = rng.below(x.size());
            } else {
                std::iota(sample.begin(), sample.end(), std::size_t{0});
            }
            detail::TreeBuilder builder(x, y, class_count, mtry, params.min_samples_split, rng);
            forest.trees_.push_back(builder.build(std::move(sample)));
        }
        return forest;
    }

    /// Per-tree majority; ties go to the lowest class index.
    Label predict(std::span<const double> x) const {
        if (x.size() != feature_names_.size()) {
            throw ShapeError("rf_predict: expected " + std::to_string(feature_names_.size()) + " features, got " +
                             std::to_string(x.size()));
        }
        std::vector<double> votes(static_cast<std::size_t>(class_count_), 0.0);
        for (const auto& tree : trees_) votes[static_cast<std::size_t>(tree.predict(x))] += 1.0;
        return Label{argmax_index(votes)};
    }

    const std::vector<DecisionTree>& trees() const { return trees_; }
    int class_count() const { return class_count_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }

    void save(std::ostream& out) const {
        io::Writer w(out);
        w.header("chemprot-forest", 1);
        w.line("classes", class_count_);
        w.strings("features", feature_names_);
        w.line("trees", trees_.size());
        for (const auto& tree : trees_) {
            w.line("tree", tree.nodes().size());
            for (const auto& n : tree.nodes()) {
                out << "node " << n.feature << ' ' << io::format_double(n.threshold) << ' ' << n.left << ' '
                    << n.right;
                for (double c : n.histogram) out << ' ' << io::format_double(c);
                out << '\n';
            }
        }
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write forest " + path.string());
        save(out);
    }

    /// Fails when the stored feature layout differs from `expected_layout`
    /// (pass an empty vector to skip the check).
    static RandomForest load(std::istream& in, const std::vector<std::string>& expected_layout = {},
                             const std::string& source = "forest") {
        io::Reader r(in, source);
        r.header("chemprot-forest", 1);
        const int classes = r.keyed<int>("classes");
        auto features = r.strings("features");
        if (!expected_layout.empty() && features != expected_layout) {
            r.fail("meta-feature layout does not match the current label set");
        }
        RandomForest forest(classes, std::move(features));
        const auto count = r.keyed<std::size_t>("trees");
        for (std::size_t t = 0; t < count; ++t) {
            DecisionTree tree;
            const auto nodes = r.keyed<std::size_t>("tree");
            for (std::size_t k = 0; k < nodes; ++k) {
                TreeNode n;
                n.feature = r.keyed<int>("node");
                n.threshold = r.value<double>();
                n.left = r.value<int>();
                n.right = r.value<int>();
                n.histogram.resize(static_cast<std::size_t>(classes));
                for (auto& c : n.histogram) c = r.value<double>();
                const auto limit = static_cast<int>(nodes);
                if (!n.is_leaf() && (n.feature >= static_cast<int>(forest.feature_names_.size()) || n.left <= 0 ||
                                     n.right <= 0 || n.left >= limit || n.right >= limit)) {
                    r.fail("corrupt tree node");
                }
                tree.nodes().push_back(std::move(n));
            }
            forest.trees_.push_back(std::move(tree));
        }
        return forest;
    }

    static RandomForest load(const std::filesystem::path& path, const std::vector<std::string>& expected_layout = {}) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open forest " + path.string());
        return load(in, expected_layout, path.string());
    }

private:
    int class_count_ = 0;
    std::vector<std::string> feature_names_;
    std::vector<DecisionTree> trees_;
};

}  // namespace chemprot
