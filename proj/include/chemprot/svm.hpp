#pragma once

// Rich string features for a candidate pair and a one-vs-rest linear SVM
// trained by dual coordinate descent (L2-regularized hinge loss).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "chemprot/corpus.hpp"
#include "chemprot/depgraph.hpp"
#include "chemprot/error.hpp"
#include "chemprot/labels.hpp"
#include "chemprot/random.hpp"
#include "chemprot/serialize.hpp"

namespace chemprot {

// ---------------------------------------------------------------------------
// Keyword lexicon

struct Keyword {
    std::string lemma;
    std::string hint;  ///< optional label hint, e.g. "CPR:4"
};

class KeywordLexicon {
public:
    KeywordLexicon() = default;
    explicit KeywordLexicon(std::vector<Keyword> entries) : entries_(std::move(entries)) {}

    /// One entry per line: `lemma` or `lemma -> hint`. '#' starts a comment.
    static KeywordLexicon parse(std::istream& in) {
        std::vector<Keyword> entries;
        std::string line;
        std::size_t line_no = 0;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            Keyword k;
            std::size_t arrow = line.find("->");
            std::size_t arrow_len = 2;
            if (arrow == std::string::npos) {
                arrow = line.find("→");
                arrow_len = std::string("→").size();
            }
            if (arrow == std::string::npos) {
                k.lemma = line;
            } else {
                k.lemma = trim(line.substr(0, arrow));
                k.hint = trim(line.substr(arrow + arrow_len));
            }
            if (k.lemma.empty() || k.lemma.find_first_of(" \t") != std::string::npos) {
                throw ParseError(line_no, "keyword must be a single lemma");
            }
            entries.push_back(std::move(k));
        }
        return KeywordLexicon(std::move(entries));
    }

    static KeywordLexicon load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open keyword lexicon " + path.string());
        return parse(in);
    }

    /// The two keywords named as exemplars for CPR:4 and CPR:5.
    static KeywordLexicon default_lexicon() {
        return KeywordLexicon({{"inhibit", "CPR:4"}, {"agonism", "CPR:5"}});
    }

    const std::vector<Keyword>& entries() const { return entries_; }

    friend bool operator==(const KeywordLexicon& a, const KeywordLexicon& b) {
        if (a.entries_.size() != b.entries_.size()) return false;
        for (std::size_t i = 0; i < a.entries_.size(); ++i) {
            if (a.entries_[i].lemma != b.entries_[i].lemma || a.entries_[i].hint != b.entries_[i].hint) return false;
        }
        return true;
    }

private:
    std::vector<Keyword> entries_;
};

// ---------------------------------------------------------------------------
// Feature extraction

/// Multiset of namespaced features (WIN, BOW, DIST, KEY, VWALK, EWALK).
using FeatureSet = std::vector<std::string>;

inline constexpr int kWindowSize = 5;

inline std::string feature_namespace(const std::string& feature) {
    return feature.substr(0, feature.find_first_of(":="));
}

inline std::string distance_bucket(int tokens_between) {
    if (tokens_between <= 5) return std::to_string(std::max(0, tokens_between));
    if (tokens_between <= 10) return "6-10";
    if (tokens_between <= 15) return "11-15";
    return "16+";
}

/// Pure function of the instance and the lexicon.
inline FeatureSet extract_features(const RelationInstance& inst, const KeywordLexicon& lexicon) {
    const Sentence& s = inst.sentence();
    const Span chem = inst.chem().span;
    const Span gene = inst.gene().span;
    const Span& left = chem.first <= gene.first ? chem : gene;
    const Span& right = chem.first <= gene.first ? gene : chem;
    const int n = s.size();
    auto tok = [&](int i) -> const Token& { return s.tokens[static_cast<std::size_t>(i)]; };

    FeatureSet f;

    // Windows of 5 tokens on each side of each mention; omitted at sentence edges.
    for (const auto& [tag, span] : {std::pair{"C", chem}, std::pair{"G", gene}}) {
        for (int d = 1; d <= kWindowSize; ++d) {
            for (const auto& [side, i] : {std::pair{"L", span.first - d}, std::pair{"R", span.last + d}}) {
                if (i < 0 || i >= n) continue;
                const std::string prefix = std::string("WIN:") + tag + ":" + side + std::to_string(d);
                f.push_back(prefix + ":lem=" + tok(i).lemma);
                f.push_back(prefix + ":pos=" + tok(i).pos);
                f.push_back(prefix + ":chk=" + tok(i).chunk);
            }
        }
    }

    // Bag of words tagged with the region relative to the pair.
    for (int i = 0; i < n; ++i) {
        if (chem.contains(i) || gene.contains(i)) continue;
        const char* region = i < left.first ? "before" : (i > right.last ? "after" : "middle");
        f.push_back(std::string("BOW:") + region + "=" + tok(i).lemma);
    }

    const int between = std::max(0, right.first - left.last - 1);
    f.push_back("DIST=" + distance_bucket(between));

    for (const auto& k : lexicon.entries()) {
        bool found = false;
        for (int i = left.last + 1; i < right.first && !found; ++i) found = tok(i).lemma == k.lemma;
        if (!found) continue;
        f.push_back("KEY=" + k.lemma);
        if (!k.hint.empty()) f.push_back("KEY=hint:" + k.hint);
    }

    const DepPath path = instance_path(inst);
    const auto words = path_words(path, s, WordForm::Lemma);
    for (const auto& w : v_walks(path, words)) f.push_back("VWALK=" + to_string(w, "|"));
    for (const auto& w : e_walks(path, words)) f.push_back("EWALK=" + to_string(w, "|"));
    return f;
}

// ---------------------------------------------------------------------------
// Vectorization

struct SparseVector {
    std::size_t dimension = 0;
    std::vector<std::pair<int, double>> entries;  ///< sorted by index, unique

    double squared_norm() const {
        double s = 0;
        for (const auto& [i, v] : entries) s += v * v;
        return s;
    }
};

/// Feature string -> column index, fitted once on training features. Indices
/// follow the sorted order of the feature strings.
class FeatureVocabulary {
public:
    FeatureVocabulary() = default;

    static FeatureVocabulary fit(std::span<const FeatureSet> train) {
        std::map<std::string, int> sorted;
        for (const auto& fs : train) {
            for (const auto& f : fs) sorted.emplace(f, 0);
        }
        std::vector<std::string> names;
        names.reserve(sorted.size());
        for (const auto& [name, unused] : sorted) names.push_back(name);
        return FeatureVocabulary(std::move(names));
    }

    explicit FeatureVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
        for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], static_cast<int>(i));
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    std::optional<int> find(const std::string& feature) const {
        auto it = index_.find(feature);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Occurrence counts; features outside the vocabulary are dropped.
    SparseVector vectorize(const FeatureSet& features) const {
        std::map<int, double> counts;
        for (const auto& f : features) {
            if (auto i = find(f)) counts[*i] += 1.0;
        }
        SparseVector v;
        v.dimension = size();
        v.entries.assign(counts.begin(), counts.end());
        return v;
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// One-vs-rest linear SVM

struct SvmParams {
    double c = 1.0;
    double tol = 1e-3;
    bool balanced = true;
    int max_epochs = 1000;
    std::uint64_t seed = 1;
};

/// N / (K * n_c) for each class present; classes absent from `labels` get 0.
inline std::vector<double> balanced_class_weights(std::span<const Label> labels, int class_count) {
    std::vector<double> counts(static_cast<std::size_t>(class_count), 0.0);
    for (Label l : labels) counts.at(static_cast<std::size_t>(l.id)) += 1.0;
    const double present = static_cast<double>(std::count_if(counts.begin(), counts.end(),
                                                             [](double c) { return c > 0; }));
    std::vector<double> w(counts.size(), 0.0);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] > 0) w[c] = static_cast<double>(labels.size()) / (present * counts[c]);
    }
    return w;
}

/// Dual objective after each epoch, per binary subproblem.
struct SvmTrainingTrace {
    std::vector<std::vector<double>> dual_objective;
    std::vector<int> epochs;
    std::vector<bool> converged;
};

/// Per-class weight vectors and biases in a fixed class order.
class LinearOvrModel {
public:
    LinearOvrModel() = default;
    LinearOvrModel(std::size_t dimension, int class_count)
        : dimension_(dimension),
          weights_(static_cast<std::size_t>(class_count), std::vector<double>(dimension, 0.0)),
          bias_(static_cast<std::size_t>(class_count), 0.0) {}

    std::size_t dimension() const { return dimension_; }
    int class_count() const { return static_cast<int>(bias_.size()); }
    std::vector<double>& weights(int c) { return weights_.at(static_cast<std::size_t>(c)); }
    const std::vector<double>& weights(int c) const { return weights_.at(static_cast<std::size_t>(c)); }
    double& bias(int c) { return bias_.at(static_cast<std::size_t>(c)); }
    double bias(int c) const { return bias_.at(static_cast<std::size_t>(c)); }

    /// Raw margins w_c . x + b_c.
    std::vector<double> decision_scores(const SparseVector& x) const {
        if (x.dimension != dimension_) {
            throw ShapeError("SVM input dimension " + std::to_string(x.dimension) + " != model dimension " +
                             std::to_string(dimension_));
        }
        std::vector<double> scores(bias_);
        for (std::size_t c = 0; c < scores.size(); ++c) {
            for (const auto& [i, v] : x.entries) scores[c] += weights_[c][static_cast<std::size_t>(i)] * v;
        }
        return scores;
    }

private:
    std::size_t dimension_ = 0;
    std::vector<std::vector<double>> weights_;
    std::vector<double> bias_;
};

/// First maximum wins.
inline Label argmax_label(std::span<const double> scores) {
    return Label{static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin())};
}

namespace detail {

/// Binary L2-regularized L1-loss SVM dual (bias as a constant feature of 1).
/// Returns w of size dim + 1, the last entry being the bias.
inline std::vector<double> solve_binary_svm(std::span<const SparseVector> xs, std::span<const double> y,
                                            std::span<const double> upper, std::size_t dim, const SvmParams& p,
                                            Rng& rng, std::vector<double>* objective, int* epochs_run,
                                            bool* converged) {
    const std::size_t n = xs.size();
    std::vector<double> w(dim + 1, 0.0);
    std::vector<double> alpha(n, 0.0);
    std::vector<double> qd(n);
    for (std::size_t i = 0; i < n; ++i) qd[i] = xs[i].squared_norm() + 1.0;

    auto dot = [&](std::size_t i) {
        double s = w[dim];
        for (const auto& [j, v] : xs[i].entries) s += w[static_cast<std::size_t>(j)] * v;
        return s;
    };

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    *converged = false;
    int epoch = 0;
    for (; epoch < p.max_epochs; ++epoch) {
        rng.shuffle(order);
        double pg_max = -std::numeric_limits<double>::infinity();
        double pg_min = std::numeric_limits<double>::infinity();
        for (std::size_t i : order) {
            const double g = y[i] * dot(i) - 1.0;
            double pg = g;
            if (alpha[i] <= 0.0) {
                pg = std::min(g, 0.0);
            } else if (alpha[i] >= upper[i]) {
                pg = std::max(g, 0.0);
            }
            pg_max = std::max(pg_max, pg);
            pg_min = std::min(pg_min, pg);
            if (std::fabs(pg) <= 1e-12) continue;
            const double old = alpha[i];
            alpha[i] = std::min(std::max(alpha[i] - g / qd[i], 0.0), upper[i]);
            const double delta = (alpha[i] - old) * y[i];
            for (const auto& [j, v] : xs[i].entries) w[static_cast<std::size_t>(j)] += delta * v;
            w[dim] += delta;
        }
        if (objective != nullptr) {
            double sum_alpha = 0.0;
            for (double a : alpha) sum_alpha += a;
            double ww = 0.0;
            for (double v : w) ww += v * v;
            objective->push_back(sum_alpha - 0.5 * ww);
        }
        if (n == 0 || pg_max - pg_min < p.tol) {
            *converged = true;
            ++epoch;
            break;
        }
    }
    *epochs_run = epoch;
    return w;
}

}  // namespace detail

/// One binary classifier per class, trained independently. Each example's
/// cost is C times its class weight (balanced or 1).
inline LinearOvrModel train_ovr(std::span<const SparseVector> xs, std::span<const Label> labels, int class_count,
                                const SvmParams& params = {}, SvmTrainingTrace* trace = nullptr) {
    if (xs.size() != labels.size()) throw ShapeError("train_ovr: vectors and labels differ in length");
    if (xs.empty()) throw ValidationError("train_ovr: empty training set");
    const std::size_t dim = xs.front().dimension;
    for (const auto& x : xs) {
        if (x.dimension != dim) throw ShapeError("train_ovr: inconsistent vector dimensions");
    }
    std::vector<double> class_weight(static_cast<std::size_t>(class_count), 1.0);
    if (params.balanced) class_weight = balanced_class_weights(labels, class_count);

    std::vector<double> upper(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        upper[i] = params.c * class_weight[static_cast<std::size_t>(labels[i].id)];
    }

    LinearOvrModel model(dim, class_count);
    if (trace != nullptr) *trace = SvmTrainingTrace{};
    for (int c = 0; c < class_count; ++c) {
        std::vector<double> y(xs.size());
        bool any_positive = false;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            y[i] = labels[i].id == c ? 1.0 : -1.0;
            any_positive = any_positive || y[i] > 0;
        }
        if (!any_positive) {
            std::cerr << "warning: class " << c << " absent from SVM training data; trained as all-negative\n";
        }
        Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(c)));
        std::vector<double> objective;
        int epochs = 0;
        bool converged = false;
        auto w = detail::solve_binary_svm(xs, y, upper, dim, params, rng, trace ? &objective : nullptr, &epochs,
                                          &converged);
        model.bias(c) = w[dim];
        w.pop_back();
        model.weights(c) = std::move(w);
        if (trace != nullptr) {
            trace->dual_objective.push_back(std::move(objective));
            trace->epochs.push_back(epochs);
            trace->converged.push_back(converged);
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Full SVM relation classifier: lexicon + vocabulary + linear model.

class SvmClassifier {
public:
    SvmClassifier() = default;
    SvmClassifier(LabelSet labels, KeywordLexicon lexicon, FeatureVocabulary vocabulary, LinearOvrModel linear)
        : labels_(std::move(labels)),
          lexicon_(std::move(lexicon)),
          vocabulary_(std::move(vocabulary)),
          linear_(std::move(linear)) {}

    static SvmClassifier train(std::span<const RelationInstance> instances, const LabelSet& labels,
                               const KeywordLexicon& lexicon, const SvmParams& params = {},
                               SvmTrainingTrace* trace = nullptr) {
        std::vector<FeatureSet> features;
        std::vector<Label> y;
        features.reserve(instances.size());
        for (const auto& inst : instances) {
            features.push_back(extract_features(inst, lexicon));
            y.push_back(inst.label());
        }
        FeatureVocabulary vocab = FeatureVocabulary::fit(features);
        std::vector<SparseVector> xs;
        xs.reserve(features.size());
        for (const auto& f : features) xs.push_back(vocab.vectorize(f));
        LinearOvrModel linear = train_ovr(xs, y, labels.size(), params, trace);
        return SvmClassifier(labels, lexicon, std::move(vocab), std::move(linear));
    }

    std::vector<double> decision_scores(const RelationInstance& inst) const {
        return linear_.decision_scores(vocabulary_.vectorize(extract_features(inst, lexicon_)));
    }

    Label predict(const RelationInstance& inst) const { return argmax_label(decision_scores(inst)); }

    const LabelSet& labels() const { return labels_; }
    const KeywordLexicon& lexicon() const { return lexicon_; }
    const FeatureVocabulary& vocabulary() const { return vocabulary_; }
    const LinearOvrModel& linear() const { return linear_; }

    void save(std::ostream& out) const {
        io::Writer w(out);
        w.header("chemprot-svm", 1);
        w.strings("labels", labels_.names());
        std::vector<std::string> lex;
        for (const auto& k : lexicon_.entries()) {
            lex.push_back(k.lemma);
            lex.push_back(k.hint);
        }
        w.strings("lexicon", lex);
        w.strings("vocabulary", vocabulary_.names());
        for (int c = 0; c < linear_.class_count(); ++c) {
            const auto& wc = linear_.weights(c);
            std::vector<std::pair<std::size_t, double>> nz;
            for (std::size_t i = 0; i < wc.size(); ++i) {
                if (wc[i] != 0.0) nz.emplace_back(i, wc[i]);
            }
            out << "class " << c << " bias " << io::format_double(linear_.bias(c)) << " nonzero " << nz.size();
            for (const auto& [i, v] : nz) out << ' ' << i << ' ' << io::format_double(v);
            out << '\n';
        }
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write SVM model " + path.string());
        save(out);
    }

    static SvmClassifier load(std::istream& in, const std::string& source = "svm model") {
        io::Reader r(in, source);
        r.header("chemprot-svm", 1);
        auto names = r.strings("labels");
        if (names.empty() || names.front() != "NEG") r.fail("label list must start with NEG");
        LabelSet labels(std::vector<std::string>(names.begin() + 1, names.end()));
        auto lex = r.strings("lexicon");
        if (lex.size() % 2 != 0) r.fail("odd lexicon field count");
        std::vector<Keyword> entries;
        for (std::size_t i = 0; i < lex.size(); i += 2) entries.push_back({lex[i], lex[i + 1]});
        FeatureVocabulary vocab(r.strings("vocabulary"));
        LinearOvrModel linear(vocab.size(), labels.size());
        for (int c = 0; c < labels.size(); ++c) {
            if (r.keyed<int>("class") != c) r.fail("class order mismatch");
            linear.bias(c) = r.keyed<double>("bias");
            const auto nz = r.keyed<std::size_t>("nonzero");
            for (std::size_t k = 0; k < nz; ++k) {
                const auto i = r.value<std::size_t>();
                if (i >= vocab.size()) r.fail("weight index out of range");
                linear.weights(c)[i] = r.value<double>();
            }
        }
        return SvmClassifier(std::move(labels), KeywordLexicon(std::move(entries)), std::move(vocab),
                             std::move(linear));
    }

    static SvmClassifier load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open SVM model " + path.string());
        return load(in, path.string());
    }

private:
    LabelSet labels_;
    KeywordLexicon lexicon_;
    FeatureVocabulary vocabulary_;
    LinearOvrModel linear_;
};

}  // namespace chemprot
