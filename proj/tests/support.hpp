#pragma once

// Fixtures, finite-difference gradient checks and independent oracles shared
// by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "chemprot/chemprot.hpp"

namespace testsupport {

using chemprot::nn::Matrix;

// ---------------------------------------------------------------------------
// Fixtures

inline chemprot::Token tok(std::string surface, std::string lemma, std::string pos, int head, std::string dep,
                           std::string chunk = "O", std::string ne = "O") {
    chemprot::Token t;
    t.surface = std::move(surface);
    t.lemma = std::move(lemma);
    t.pos = std::move(pos);
    t.chunk = std::move(chunk);
    t.ne = std::move(ne);
    t.head = head;
    t.dep_label = std::move(dep);
    return t;
}

inline void assign_offsets(chemprot::Document& d) {
    int offset = 0;
    for (auto& s : d.sentences) {
        for (auto& t : s.tokens) {
            t.char_start = offset;
            t.char_end = offset + static_cast<int>(t.surface.size());
            offset = t.char_end + 1;
        }
    }
}

/// "Gemfibrozil, a lipid-lowering drug, inhibits the induction of
/// nitric-oxide synthase in human astrocytes."
inline chemprot::Document gemfibrozil_document() {
    using chemprot::kRoot;
    chemprot::Document d;
    d.id = "GEM1";
    chemprot::Sentence s;
    s.tokens = {
        tok("Gemfibrozil", "gemfibrozil", "NN", 6, "nsubj", "B-NP"),
        tok(",", ",", ",", 0, "punct"),
        tok("a", "a", "DT", 4, "det", "B-NP"),
        tok("lipid-lowering", "lipid-lowering", "JJ", 4, "amod", "I-NP"),
        tok("drug", "drug", "NN", 0, "appos", "I-NP"),
        tok(",", ",", ",", 0, "punct"),
        tok("inhibits", "inhibit", "VBZ", kRoot, "root", "B-VP"),
        tok("the", "the", "DT", 8, "det", "B-NP"),
        tok("induction", "induction", "NN", 6, "dobj", "I-NP"),
        tok("of", "of", "IN", 11, "case", "B-PP"),
        tok("nitric-oxide", "nitric-oxide", "NN", 11, "compound", "B-NP", "B-protein"),
        tok("synthase", "synthase", "NN", 8, "nmod:of", "I-NP", "I-protein"),
        tok("in", "in", "IN", 14, "case", "B-PP"),
        tok("human", "human", "JJ", 14, "amod", "B-NP"),
        tok("astrocytes", "astrocyte", "NNS", 8, "nmod:in", "I-NP"),
        tok(".", ".", ".", 6, "punct"),
    };
    d.sentences.push_back(std::move(s));
    d.mentions = {{"T1", chemprot::EntityKind::Chemical, 0, {0, 0}, "Gemfibrozil"},
                  {"T2", chemprot::EntityKind::Gene, 0, {10, 11}, "nitric-oxide synthase"}};
    d.relations = {{"CPR:4", "T1", "T2"}};
    assign_offsets(d);
    return d;
}

// ---------------------------------------------------------------------------
// Finite differences

inline double relative_error(double analytic, double numeric) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
}

/// Worst relative error between `analytic` and central differences of `loss`
/// with respect to every entry of `m` (which `loss` must read).
inline double check_gradient(Matrix& m, const Matrix& analytic, const std::function<double()>& loss,
                             double h = 1e-5) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double saved = m.data()[i];
        m.data()[i] = saved + h;
        const double up = loss();
        m.data()[i] = saved - h;
        const double down = loss();
        m.data()[i] = saved;
        worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, chemprot::Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
    return m;
}

inline int rand_int(chemprot::Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::size_t>(hi - lo + 1))); }

inline double weighted_sum(const Matrix& out, const Matrix& r) { return (out.array() * r.array()).sum(); }

// Each gradcheck_* draws a random configuration from `seed` and returns the
// worst relative error over all inputs and parameters.

inline double gradcheck_conv1d(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const int window = rand_int(rng, 1, 4);
    const int len = rand_int(rng, window, 9);
    const int dim = rand_int(rng, 1, 5);
    const int filters = rand_int(rng, 1, 4);
    Matrix x = random_matrix(len, dim, rng);
    Matrix w = random_matrix(window * dim, filters, rng);
    Matrix b = random_matrix(1, filters, rng);
    const Matrix r = random_matrix(len - window + 1, filters, rng);
    Matrix dw = Matrix::Zero(w.rows(), w.cols()), db = Matrix::Zero(1, filters), dx = Matrix::Zero(len, dim);
    nn::conv1d_backward(x, w, window, r, dw, db, &dx);
    auto loss = [&] { return weighted_sum(nn::conv1d(x, w, b, window), r); };
    return std::max({check_gradient(x, dx, loss), check_gradient(w, dw, loss), check_gradient(b, db, loss)});
}

inline double gradcheck_max_over_time(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    Matrix x = random_matrix(rand_int(rng, 1, 7), rand_int(rng, 1, 5), rng);
    const Matrix r = random_matrix(1, x.cols(), rng);
    const auto p = nn::max_over_time(x);
    const Matrix dx = nn::max_over_time_backward(p, x.rows(), r);
    return check_gradient(x, dx, [&] { return weighted_sum(nn::max_over_time(x).value, r); });
}

inline double gradcheck_dense(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const int n = rand_int(rng, 1, 4), in = rand_int(rng, 1, 6), out = rand_int(rng, 1, 5);
    Matrix x = random_matrix(n, in, rng), w = random_matrix(in, out, rng), b = random_matrix(1, out, rng);
    const Matrix r = random_matrix(n, out, rng);
    Matrix dw = Matrix::Zero(in, out), db = Matrix::Zero(1, out), dx = Matrix::Zero(n, in);
    nn::dense_backward(x, w, r, dw, db, &dx);
    auto loss = [&] { return weighted_sum(nn::dense(x, w, b), r); };
    return std::max({check_gradient(x, dx, loss), check_gradient(w, dw, loss), check_gradient(b, db, loss)});
}

inline double gradcheck_lstm_step(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const int in = rand_int(rng, 1, 5), hidden = rand_int(rng, 1, 4);
    Matrix x = random_matrix(1, in, rng), h = random_matrix(1, hidden, rng), c = random_matrix(1, hidden, rng);
    Matrix wx = random_matrix(in, 4 * hidden, rng), wh = random_matrix(hidden, 4 * hidden, rng);
    Matrix b = random_matrix(1, 4 * hidden, rng);
    const Matrix rh = random_matrix(1, hidden, rng), rc = random_matrix(1, hidden, rng);
    const auto step = nn::lstm_step(x, h, c, wx, wh, b);
    const auto g = nn::lstm_step_backward(step, wx, wh, rh, rc);
    auto loss = [&] {
        const auto s = nn::lstm_step(x, h, c, wx, wh, b);
        return weighted_sum(s.h, rh) + weighted_sum(s.c, rc);
    };
    return std::max({check_gradient(x, g.d_x, loss), check_gradient(h, g.d_h_prev, loss),
                     check_gradient(c, g.d_c_prev, loss), check_gradient(wx, g.d_wx, loss),
                     check_gradient(wh, g.d_wh, loss), check_gradient(b, g.d_b, loss)});
}

/// Includes fixed recurrent-dropout masks on both directions.
inline double gradcheck_bilstm(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const int len = rand_int(rng, 1, 5), in = rand_int(rng, 1, 4), hidden = rand_int(rng, 1, 3);
    nn::LstmLayer fwd("f", in, hidden), bwd("b", in, hidden);
    fwd.initialize(rng);
    bwd.initialize(rng);
    fwd.b.value = random_matrix(1, 4 * hidden, rng);
    Matrix x = random_matrix(len, in, rng);
    const Matrix fm = rng.uniform() < 0.5 ? Matrix() : nn::dropout_mask(1, hidden, 0.3, rng);
    const Matrix bm = rng.uniform() < 0.5 ? Matrix() : nn::dropout_mask(1, hidden, 0.3, rng);
    const Matrix r = random_matrix(len, 2 * hidden, rng);
    const auto cache = nn::bilstm(x, fwd, bwd, fm, bm);
    const Matrix dx = nn::bilstm_backward(cache, x, fwd, bwd, r);
    auto loss = [&] { return weighted_sum(nn::bilstm(x, fwd, bwd, fm, bm).output, r); };
    double worst = check_gradient(x, dx, loss);
    for (nn::LstmLayer* l : {&fwd, &bwd}) {
        for (nn::Parameter* p : {&l->wx, &l->wh, &l->b}) {
            const Matrix analytic = p->grad;
            worst = std::max(worst, check_gradient(p->value, analytic, loss));
        }
    }
    return worst;
}

inline double gradcheck_softmax_ce(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const int k = rand_int(rng, 2, 7);
    const int gold = rand_int(rng, 0, k - 1);
    Matrix logits = random_matrix(1, k, rng, 3.0);
    const Matrix g = nn::softmax_ce(logits, gold).grad;
    return check_gradient(logits, g, [&] { return nn::softmax_ce(logits, gold).loss; });
}

inline double gradcheck_ranking_loss(std::uint64_t seed) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const int k = rand_int(rng, 1, 6);
    std::optional<int> gold;
    if (rng.uniform() < 0.6) gold = rand_int(rng, 0, k - 1);
    Matrix s = random_matrix(1, k, rng, 3.0);
    const Matrix g = nn::ranking_loss(s, gold).grad;
    return check_gradient(s, g, [&] { return nn::ranking_loss(s, gold).loss; });
}

/// A few instances from a generated corpus; the corpus is kept alive by the
/// caller through the returned holder.
struct InstanceFixture {
    chemprot::AnnotatedCorpus corpus;
    std::vector<chemprot::RelationInstance> instances;

    explicit InstanceFixture(std::size_t docs = 6, std::uint64_t seed = 3)
        : corpus(chemprot::generate_synthetic_corpus(docs, seed)),
          instances(chemprot::labeled_instances(corpus, chemprot::LabelSet{})) {}
};

inline double gradcheck_cnn_model(std::uint64_t seed, const InstanceFixture& fx) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const auto& inst = fx.instances[rng.below(fx.instances.size())];
    chemprot::CnnConfig c;
    c.word_dim = 4;
    c.pos_dim = c.chunk_dim = c.ne_dim = c.dep_dim = c.position_dim = 2;
    c.filters = 2;
    c.windows = {3, 5};
    c.position_clip = 4;
    const std::span<const chemprot::RelationInstance> one(&inst, 1);
    chemprot::CnnModel model(c, chemprot::CnnVocabularies::build(one), 6);
    model.initialize(rng);
    // Larger weights than the default init so that no gradient is negligible.
    for (nn::Parameter* p : model.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, 0.5);
    const auto enc = chemprot::encode_instance(inst, model.vocabularies(), c);
    const int gold = rand_int(rng, 0, 5);
    auto params = model.parameters();
    nn::zero_grads(params);
    model.accumulate_gradient(enc, chemprot::Label{gold}, false, rng);
    auto loss = [&] { return nn::softmax_ce(model.forward(enc).scores, gold).loss; };
    double worst = 0.0;
    for (nn::Parameter* p : params) {
        const Matrix analytic = p->grad;
        worst = std::max(worst, check_gradient(p->value, analytic, loss));
    }
    return worst;
}

inline double gradcheck_rnn_model(std::uint64_t seed, const InstanceFixture& fx) {
    namespace nn = chemprot::nn;
    chemprot::Rng rng(seed);
    const auto& inst = fx.instances[rng.below(fx.instances.size())];
    chemprot::RnnConfig c;
    c.word_dim = c.pos_dim = c.chunk_dim = c.position_dim = 2;
    c.hidden = 3;
    c.min_word_freq = 1;
    c.position_clip = 4;
    const std::span<const chemprot::RelationInstance> one(&inst, 1);
    chemprot::RnnModel model(c, chemprot::RnnVocabulary::build(one, 1), 5);
    model.initialize(rng);
    for (nn::Parameter* p : model.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, 0.5);
    const auto rows = model.encode(inst);
    const chemprot::Label gold{rand_int(rng, 0, 5)};
    const std::optional<int> target = gold.is_negative() ? std::nullopt : std::optional<int>(gold.id - 1);
    auto params = model.parameters();
    nn::zero_grads(params);
    model.accumulate_gradient(rows, gold, false, rng);
    auto loss = [&] { return nn::ranking_loss(model.forward(rows), target, c.ranking).loss; };
    double worst = 0.0;
    for (nn::Parameter* p : params) {
        const Matrix analytic = p->grad;
        worst = std::max(worst, check_gradient(p->value, analytic, loss));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Oracles

/// Length of the shortest simple path by exhaustive DFS over an adjacency
/// matrix, together with the lexicographically smallest such node sequence.
struct PathOracle {
    std::vector<std::vector<bool>> adj;
    int target = 0;
    std::optional<std::vector<int>> best;
    std::vector<int> cur;
    std::vector<bool> used;

    void dfs(int u) {
        if (u == target) {
            if (!best || cur.size() < best->size() || (cur.size() == best->size() && cur < *best)) best = cur;
            return;
        }
        for (int v = 0; v < static_cast<int>(adj.size()); ++v) {
            if (!adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] || used[static_cast<std::size_t>(v)]) continue;
            used[static_cast<std::size_t>(v)] = true;
            cur.push_back(v);
            dfs(v);
            cur.pop_back();
            used[static_cast<std::size_t>(v)] = false;
        }
    }

    static std::optional<std::vector<int>> solve(const std::vector<std::vector<bool>>& adj, int from, int to) {
        PathOracle o;
        o.adj = adj;
        o.target = to;
        o.used.assign(adj.size(), false);
        o.used[static_cast<std::size_t>(from)] = true;
        o.cur = {from};
        o.dfs(from);
        return o.best;
    }
};

/// Counts votes for every label and returns the positive label that has the
/// required number of votes, NEG otherwise.
inline chemprot::Label vote_oracle(int a, int b, int c, bool unanimous = false) {
    std::map<int, int> counts;
    for (int l : {a, b, c}) ++counts[l];
    for (const auto& [label, n] : counts) {
        if (label != 0 && n >= (unanimous ? 3 : 2)) return chemprot::Label{label};
    }
    return chemprot::kNegative;
}

/// Recursive walk over the serialized node arrays of each tree.
inline int tree_walk_oracle(const std::vector<chemprot::TreeNode>& nodes, int index, const std::vector<double>& x) {
    const auto& n = nodes[static_cast<std::size_t>(index)];
    if (n.feature < 0) {
        int best = 0;
        for (int k = 1; k < static_cast<int>(n.histogram.size()); ++k) {
            if (n.histogram[static_cast<std::size_t>(k)] > n.histogram[static_cast<std::size_t>(best)]) best = k;
        }
        return best;
    }
    const bool left = !(x[static_cast<std::size_t>(n.feature)] > n.threshold);
    return tree_walk_oracle(nodes, left ? n.left : n.right, x);
}

inline int forest_oracle(const chemprot::RandomForest& f, const std::vector<double>& x) {
    std::vector<int> votes(static_cast<std::size_t>(f.class_count()), 0);
    for (const auto& t : f.trees()) ++votes[static_cast<std::size_t>(tree_walk_oracle(t.nodes(), 0, x))];
    int best = 0;
    for (int k = 1; k < f.class_count(); ++k) {
        if (votes[static_cast<std::size_t>(k)] > votes[static_cast<std::size_t>(best)]) best = k;
    }
    return best;
}

/// Trigger-word regex labeller working on raw sentence text: the class of
/// the earliest trigger form strictly between the two mentions.
class TriggerRegexOracle {
public:
    TriggerRegexOracle() {
        const std::vector<std::pair<std::string, std::string>> forms = {
            {"CPR:3", "activates|activated|increases|increased|upregulates|upregulated"},
            {"CPR:4", "inhibits|inhibited|blocks|blocked|suppresses|suppressed"},
            {"CPR:5", "agonism|agonizes|agonized"},
            {"CPR:6", "antagonizes|antagonized|antagonism"},
            {"CPR:9", "metabolizes|metabolized|substrate"},
        };
        for (const auto& [label, alternatives] : forms) {
            patterns_.emplace_back(label, std::regex("(^|\\s)(" + alternatives + ")(\\s|$)"));
        }
    }

    std::string label(const chemprot::Document& doc, const chemprot::EntityMention& a,
                      const chemprot::EntityMention& b) const {
        const auto& s = doc.sentences[static_cast<std::size_t>(a.sentence)];
        const auto& first = a.span.first < b.span.first ? a : b;
        const auto& second = a.span.first < b.span.first ? b : a;
        const int from = s.tokens[static_cast<std::size_t>(first.span.last)].char_end;
        const int to = s.tokens[static_cast<std::size_t>(second.span.first)].char_start;
        const std::string between = text(doc).substr(static_cast<std::size_t>(from), static_cast<std::size_t>(std::max(0, to - from)));
        std::string best = "NEG";
        std::ptrdiff_t best_pos = -1;
        for (const auto& [l, re] : patterns_) {
            std::smatch m;
            if (std::regex_search(between, m, re) && (best_pos < 0 || m.position(2) < best_pos)) {
                best = l;
                best_pos = m.position(2);
            }
        }
        return best;
    }

    /// Document text rebuilt from character offsets.
    static std::string text(const chemprot::Document& doc) {
        std::string t;
        for (const auto& s : doc.sentences) {
            for (const auto& k : s.tokens) {
                if (static_cast<int>(t.size()) < k.char_start) t.resize(static_cast<std::size_t>(k.char_start), ' ');
                t.replace(static_cast<std::size_t>(k.char_start), k.surface.size(), k.surface);
            }
        }
        return t;
    }

    std::vector<chemprot::RelationTuple> predict(const chemprot::AnnotatedCorpus& corpus) const {
        std::vector<chemprot::RelationTuple> out;
        for (const auto& d : corpus.documents) {
            for (const auto& c : d.mentions) {
                if (c.kind != chemprot::EntityKind::Chemical) continue;
                for (const auto& g : d.mentions) {
                    if (g.kind != chemprot::EntityKind::Gene || g.sentence != c.sentence) continue;
                    const std::string l = label(d, c, g);
                    if (l != "NEG") out.push_back({d.id, l, c.id, g.id});
                }
            }
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, std::regex>> patterns_;
};

/// Separable 6-class sparse data: each class owns a block of features; every
/// example activates a few of its own block plus shared noise features.
struct SeparableSet {
    std::vector<chemprot::SparseVector> xs;
    std::vector<chemprot::Label> ys;
};

inline SeparableSet separable_clusters(int per_class, int classes, std::uint64_t seed) {
    chemprot::Rng rng(seed);
    const int block = 6, noise = 10;
    const std::size_t dim = static_cast<std::size_t>(classes * block + noise);
    SeparableSet s;
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            std::map<int, double> e;
            for (int k = 0; k < 3; ++k) e[c * block + static_cast<int>(rng.below(block))] += 1.0;
            for (int k = 0; k < 2; ++k) e[classes * block + static_cast<int>(rng.below(noise))] += 1.0;
            chemprot::SparseVector v;
            v.dimension = dim;
            v.entries.assign(e.begin(), e.end());
            s.xs.push_back(std::move(v));
            s.ys.push_back(chemprot::Label{c});
        }
    }
    return s;
}

/// Multiclass perceptron; returns true when it reaches zero training errors,
/// which certifies linear separability.
inline bool perceptron_separable(const SeparableSet& s, int classes, int max_epochs = 1000) {
    const std::size_t dim = s.xs.front().dimension + 1;
    std::vector<std::vector<double>> w(static_cast<std::size_t>(classes), std::vector<double>(dim, 0.0));
    auto score = [&](int c, const chemprot::SparseVector& x) {
        double v = w[static_cast<std::size_t>(c)][dim - 1];
        for (const auto& [i, a] : x.entries) v += w[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] * a;
        return v;
    };
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        int errors = 0;
        for (std::size_t n = 0; n < s.xs.size(); ++n) {
            int best = 0;
            for (int c = 1; c < classes; ++c) {
                if (score(c, s.xs[n]) > score(best, s.xs[n])) best = c;
            }
            const int gold = s.ys[n].id;
            bool strict = true;
            for (int c = 0; c < classes; ++c) {
                if (c != gold && score(c, s.xs[n]) >= score(gold, s.xs[n])) strict = false;
            }
            if (strict) continue;
            ++errors;
            auto upd = [&](int c, double sign) {
                for (const auto& [i, a] : s.xs[n].entries) w[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] += sign * a;
                w[static_cast<std::size_t>(c)][dim - 1] += sign;
            };
            upd(gold, 1.0);
            upd(best == gold ? (gold + 1) % classes : best, -1.0);
        }
        if (errors == 0) return true;
    }
    return false;
}

}  // namespace testsupport
