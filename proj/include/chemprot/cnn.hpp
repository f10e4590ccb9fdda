#pragma once

// Dual-input CNN relation classifier. The sentence and the shortest
// dependency path between the two mentions are embedded with shared tables,
// convolved per window size, max-pooled, concatenated and classified with a
// softmax layer over all classes (NEG included).

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "chemprot/corpus.hpp"
#include "chemprot/depgraph.hpp"
#include "chemprot/labels.hpp"
#include "chemprot/metrics.hpp"
#include "chemprot/neural.hpp"
#include "chemprot/random.hpp"
#include "chemprot/serialize.hpp"
#include "chemprot/training.hpp"

namespace chemprot {

struct CnnConfig {
    int word_dim = 300;
    int pos_dim = 32;
    int chunk_dim = 32;
    int ne_dim = 32;
    int dep_dim = 32;
    int position_dim = 32;
    int filters = 200;  ///< per window size and input layer
    std::vector<int> windows{3, 5};
    double dropout = 0.5;
    int batch_size = 32;
    int epochs = 50;
    int patience = 5;  ///< epochs without dev improvement before stopping
    int position_clip = 30;
    bool train_word_embeddings = true;
    nn::AdamConfig adam{};
    std::string word_vectors;  ///< optional pretrained `word v1 ... vD` file

    void validate() const {
        for (int d : {word_dim, pos_dim, chunk_dim, ne_dim, dep_dim, position_dim, filters, batch_size, position_clip}) {
            if (d < 1) throw ConfigError("cnn: dimensions, filters, batch size and clip must be >= 1");
        }
        if (windows.empty()) throw ConfigError("cnn: windows must be nonempty");
        for (int w : windows) {
            if (w < 1) throw ConfigError("cnn: window sizes must be >= 1");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cnn: dropout must be in [0, 1)");
    }

    int token_dim() const { return word_dim + pos_dim + chunk_dim + ne_dim + dep_dim + 2 * position_dim; }
    int max_window() const { return *std::max_element(windows.begin(), windows.end()); }
    int pooled_dim() const { return 2 * static_cast<int>(windows.size()) * filters; }
};

/// Signed token distance to a span: 0 inside, negative before, positive after,
/// clipped to [-clip, clip] and shifted to a row index. Row 2*clip+1 is PAD.
inline int position_index(int token, const Span& span, int clip) {
    int d = 0;
    if (token < span.first) d = token - span.first;
    if (token > span.last) d = token - span.last;
    return std::clamp(d, -clip, clip) + clip;
}

inline int position_pad(int clip) { return 2 * clip + 1; }

struct CnnTokenRow {
    int word = 0, pos = 0, chunk = 0, ne = 0, dep = 0, to_chem = 0, to_gene = 0;
};

struct CnnInstanceEncoding {
    std::vector<CnnTokenRow> sentence;
    std::vector<CnnTokenRow> path;
};

struct CnnVocabularies {
    nn::Vocabulary words, pos, chunk, ne, dep;

    /// Symbols seen in the training instances' sentences.
    static CnnVocabularies build(std::span<const RelationInstance> train) {
        CnnVocabularies v;
        std::set<const Sentence*> seen;
        for (const auto& inst : train) {
            if (!seen.insert(&inst.sentence()).second) continue;
            for (const auto& t : inst.sentence().tokens) {
                v.words.add(detail::lowercase(t.surface));
                v.pos.add(t.pos);
                v.chunk.add(t.chunk);
                v.ne.add(t.ne);
                v.dep.add(dependency_symbol(t));
            }
        }
        return v;
    }

    /// Label of the token's incoming edge.
    static std::string dependency_symbol(const Token& t) { return t.head == kRoot ? "ROOT" : t.dep_label; }
};

inline CnnInstanceEncoding encode_instance(const RelationInstance& inst, const CnnVocabularies& v,
                                           const CnnConfig& config) {
    const Sentence& s = inst.sentence();
    const int clip = config.position_clip;
    auto row = [&](int i) {
        const Token& t = s.tokens[static_cast<std::size_t>(i)];
        return CnnTokenRow{v.words.lookup(detail::lowercase(t.surface)),
                           v.pos.lookup(t.pos),
                           v.chunk.lookup(t.chunk),
                           v.ne.lookup(t.ne),
                           v.dep.lookup(CnnVocabularies::dependency_symbol(t)),
                           position_index(i, inst.chem().span, clip),
                           position_index(i, inst.gene().span, clip)};
    };
    const CnnTokenRow pad{nn::Vocabulary::kPad, nn::Vocabulary::kPad, nn::Vocabulary::kPad, nn::Vocabulary::kPad,
                          nn::Vocabulary::kPad, position_pad(clip), position_pad(clip)};
    CnnInstanceEncoding e;
    for (int i = 0; i < s.size(); ++i) e.sentence.push_back(row(i));
    for (int n : instance_path(inst).nodes) e.path.push_back(row(n));
    if (e.path.empty()) e.path.push_back(pad);
    const auto min_len = static_cast<std::size_t>(config.max_window());
    while (e.sentence.size() < min_len) e.sentence.push_back(pad);
    while (e.path.size() < min_len) e.path.push_back(pad);
    return e;
}

struct CnnOutput {
    nn::Matrix scores;         ///< 1 x classes, pre-softmax
    nn::Matrix probabilities;  ///< softmax(scores)
};

class CnnModel {
public:
    CnnModel() = default;

    CnnModel(CnnConfig config, CnnVocabularies vocab, int class_count)
        : config_(std::move(config)), vocab_(std::move(vocab)), class_count_(class_count) {
        config_.validate();
        const int clip_rows = 2 * config_.position_clip + 2;
        emb_word_ = nn::Parameter("emb.word", vocab_.words.size(), config_.word_dim);
        emb_pos_ = nn::Parameter("emb.pos", vocab_.pos.size(), config_.pos_dim);
        emb_chunk_ = nn::Parameter("emb.chunk", vocab_.chunk.size(), config_.chunk_dim);
        emb_ne_ = nn::Parameter("emb.ne", vocab_.ne.size(), config_.ne_dim);
        emb_dep_ = nn::Parameter("emb.dep", vocab_.dep.size(), config_.dep_dim);
        emb_to_chem_ = nn::Parameter("emb.to_chem", clip_rows, config_.position_dim);
        emb_to_gene_ = nn::Parameter("emb.to_gene", clip_rows, config_.position_dim);
        const int d = config_.token_dim();
        for (const char* input : {"sentence", "path"}) {
            for (int w : config_.windows) {
                const std::string name = std::string("conv.") + input + "." + std::to_string(w);
                filters_.emplace_back(name + ".w", w * d, config_.filters);
                filter_bias_.emplace_back(name + ".b", 1, config_.filters);
            }
        }
        out_w_ = nn::Parameter("out.w", config_.pooled_dim(), class_count_);
        out_b_ = nn::Parameter("out.b", 1, class_count_);
    }

    void initialize(Rng& rng) {
        for (nn::Parameter* e : embeddings()) nn::init_uniform(e->value, 0.05, rng);
        const int d = config_.token_dim();
        for (std::size_t k = 0; k < filters_.size(); ++k) {
            const int w = window_of(k);
            nn::init_uniform(filters_[k].value, nn::glorot_bound(w * d, config_.filters), rng);
            filter_bias_[k].value.setZero();
        }
        nn::init_uniform(out_w_.value, nn::glorot_bound(config_.pooled_dim(), class_count_), rng);
        out_b_.value.setZero();
    }

    const CnnConfig& config() const { return config_; }
    const CnnVocabularies& vocabularies() const { return vocab_; }
    int class_count() const { return class_count_; }

    std::vector<nn::Parameter*> parameters() { return collect(*this); }
    std::vector<const nn::Parameter*> parameters() const { return collect(*this); }

    /// Parameters updated by the optimizer (word table excluded when frozen).
    std::vector<nn::Parameter*> trainable_parameters() {
        auto p = parameters();
        if (!config_.train_word_embeddings) p.erase(p.begin());
        return p;
    }

    nn::Parameter& word_embeddings() { return emb_word_; }

    CnnOutput forward(const CnnInstanceEncoding& e) const {
        Rng unused(0);
        Cache cache;
        return run(e, false, unused, cache);
    }

    CnnOutput forward(const RelationInstance& inst) const { return forward(encode_instance(inst, vocab_, config_)); }

    Label predict(const RelationInstance& inst) const {
        const CnnOutput out = forward(inst);
        Eigen::Index best = 0;
        out.scores.row(0).maxCoeff(&best);
        return Label{static_cast<int>(best)};
    }

    /// Cross-entropy loss for one instance; gradients are added to the
    /// parameters' grad buffers. In train mode dropout draws from `rng`.
    double accumulate_gradient(const CnnInstanceEncoding& e, Label gold, bool train, Rng& rng) {
        Cache cache;
        const CnnOutput out = run(e, train, rng, cache);
        const nn::LossResult loss = nn::softmax_ce(out.scores, gold.id);
        backward(e, cache, loss.grad);
        return loss.loss;
    }

    void save(std::ostream& out) const {
        io::Writer w(out);
        w.header("chemprot-cnn", 1);
        w.line("classes", class_count_);
        w.line("dims", config_.word_dim, config_.pos_dim, config_.chunk_dim, config_.ne_dim, config_.dep_dim,
               config_.position_dim);
        w.line("filters", config_.filters);
        w.line("windows", static_cast<int>(config_.windows.size()));
        for (int win : config_.windows) w.line("window", win);
        w.line("position_clip", config_.position_clip);
        w.line("dropout", config_.dropout);
        w.strings("vocab.word", vocab_.words.symbols());
        w.strings("vocab.pos", vocab_.pos.symbols());
        w.strings("vocab.chunk", vocab_.chunk.symbols());
        w.strings("vocab.ne", vocab_.ne.symbols());
        w.strings("vocab.dep", vocab_.dep.symbols());
        for (const nn::Parameter* p : parameters()) nn::write_parameter(w, *p);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write CNN checkpoint " + path.string());
        save(out);
    }

    static CnnModel load(std::istream& in, const std::string& source = "cnn checkpoint") {
        io::Reader r(in, source);
        r.header("chemprot-cnn", 1);
        const int classes = r.keyed<int>("classes");
        CnnConfig c;
        c.word_dim = r.keyed<int>("dims");
        c.pos_dim = r.value<int>();
        c.chunk_dim = r.value<int>();
        c.ne_dim = r.value<int>();
        c.dep_dim = r.value<int>();
        c.position_dim = r.value<int>();
        c.filters = r.keyed<int>("filters");
        const int nwin = r.keyed<int>("windows");
        c.windows.clear();
        for (int k = 0; k < nwin; ++k) c.windows.push_back(r.keyed<int>("window"));
        c.position_clip = r.keyed<int>("position_clip");
        c.dropout = r.keyed<double>("dropout");
        CnnVocabularies v;
        v.words = nn::Vocabulary(r.strings("vocab.word"));
        v.pos = nn::Vocabulary(r.strings("vocab.pos"));
        v.chunk = nn::Vocabulary(r.strings("vocab.chunk"));
        v.ne = nn::Vocabulary(r.strings("vocab.ne"));
        v.dep = nn::Vocabulary(r.strings("vocab.dep"));
        CnnModel m(c, std::move(v), classes);
        for (nn::Parameter* p : m.parameters()) nn::read_parameter(r, *p);
        return m;
    }

    static CnnModel load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open CNN checkpoint " + path.string());
        return load(in, path.string());
    }

private:
    struct Bank {
        nn::Matrix conv;  ///< post-ReLU activations
        nn::Pooled pooled;
    };
    struct Cache {
        nn::Matrix x_sentence, x_path;
        std::vector<Bank> banks;
        nn::Matrix features, dropout_mask, dropped;
    };

    std::vector<nn::Parameter*> embeddings() {
        return {&emb_word_, &emb_pos_, &emb_chunk_, &emb_ne_, &emb_dep_, &emb_to_chem_, &emb_to_gene_};
    }

    template <class Self>
    static std::vector<std::conditional_t<std::is_const_v<Self>, const nn::Parameter*, nn::Parameter*>> collect(
        Self& self) {
        std::vector<std::conditional_t<std::is_const_v<Self>, const nn::Parameter*, nn::Parameter*>> p{&self.emb_word_, &self.emb_pos_, &self.emb_chunk_, &self.emb_ne_,
                           &self.emb_dep_, &self.emb_to_chem_, &self.emb_to_gene_};
        for (std::size_t k = 0; k < self.filters_.size(); ++k) {
            p.push_back(&self.filters_[k]);
            p.push_back(&self.filter_bias_[k]);
        }
        p.push_back(&self.out_w_);
        p.push_back(&self.out_b_);
        return p;
    }

    int window_of(std::size_t bank) const {
        return config_.windows[bank % config_.windows.size()];
    }

    static std::vector<int> column(std::span<const CnnTokenRow> rows, int CnnTokenRow::*field) {
        std::vector<int> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r.*field);
        return out;
    }

    static constexpr std::array<int CnnTokenRow::*, 7> kFields{&CnnTokenRow::word, &CnnTokenRow::pos,
                                                               &CnnTokenRow::chunk, &CnnTokenRow::ne,
                                                               &CnnTokenRow::dep, &CnnTokenRow::to_chem,
                                                               &CnnTokenRow::to_gene};

    nn::Matrix embed_rows(std::span<const CnnTokenRow> rows) const {
        const std::array<const nn::Parameter*, 7> tables{&emb_word_, &emb_pos_, &emb_chunk_, &emb_ne_,
                                                         &emb_dep_, &emb_to_chem_, &emb_to_gene_};
        nn::Matrix x(static_cast<Eigen::Index>(rows.size()), config_.token_dim());
        Eigen::Index col = 0;
        for (std::size_t k = 0; k < tables.size(); ++k) {
            const auto idx = column(rows, kFields[k]);
            const Eigen::Index w = tables[k]->value.cols();
            x.middleCols(col, w) = nn::embed(tables[k]->value, idx);
            col += w;
        }
        return x;
    }

    void embed_rows_backward(std::span<const CnnTokenRow> rows, const nn::Matrix& d_x) {
        const std::array<nn::Parameter*, 7> tables{&emb_word_, &emb_pos_, &emb_chunk_, &emb_ne_,
                                                   &emb_dep_, &emb_to_chem_, &emb_to_gene_};
        Eigen::Index col = 0;
        for (std::size_t k = 0; k < tables.size(); ++k) {
            const Eigen::Index w = tables[k]->value.cols();
            nn::embed_backward(column(rows, kFields[k]), d_x.middleCols(col, w), tables[k]->grad);
            col += w;
        }
    }

    CnnOutput run(const CnnInstanceEncoding& e, bool train, Rng& rng, Cache& cache) const {
        cache.x_sentence = embed_rows(e.sentence);
        cache.x_path = embed_rows(e.path);
        const std::size_t per_input = config_.windows.size();
        cache.features.resize(1, config_.pooled_dim());
        cache.banks.clear();
        for (std::size_t k = 0; k < filters_.size(); ++k) {
            const nn::Matrix& x = k < per_input ? cache.x_sentence : cache.x_path;
            Bank b;
            b.conv = nn::relu(nn::conv1d(x, filters_[k].value, filter_bias_[k].value, window_of(k)));
            b.pooled = nn::max_over_time(b.conv);
            cache.features.middleCols(static_cast<Eigen::Index>(k) * config_.filters, config_.filters) = b.pooled.value;
            cache.banks.push_back(std::move(b));
        }
        cache.dropped = nn::dropout(cache.features, config_.dropout, rng, train, &cache.dropout_mask);
        CnnOutput out;
        out.scores = nn::dense(cache.dropped, out_w_.value, out_b_.value);
        nn::require_finite(out.scores, "cnn scores");
        out.probabilities = nn::softmax(out.scores);
        return out;
    }

    void backward(const CnnInstanceEncoding& e, const Cache& cache, const nn::Matrix& d_scores) {
        nn::Matrix d_dropped = nn::Matrix::Zero(1, config_.pooled_dim());
        nn::dense_backward(cache.dropped, out_w_.value, d_scores, out_w_.grad, out_b_.grad, &d_dropped);
        const nn::Matrix d_features = (d_dropped.array() * cache.dropout_mask.array()).matrix();
        nn::Matrix d_x_sentence = nn::Matrix::Zero(cache.x_sentence.rows(), cache.x_sentence.cols());
        nn::Matrix d_x_path = nn::Matrix::Zero(cache.x_path.rows(), cache.x_path.cols());
        const std::size_t per_input = config_.windows.size();
        for (std::size_t k = 0; k < filters_.size(); ++k) {
            const Bank& b = cache.banks[k];
            const nn::Matrix d_pooled =
                d_features.middleCols(static_cast<Eigen::Index>(k) * config_.filters, config_.filters);
            const nn::Matrix d_conv =
                nn::relu_backward(b.conv, nn::max_over_time_backward(b.pooled, b.conv.rows(), d_pooled));
            const bool sentence = k < per_input;
            nn::conv1d_backward(sentence ? cache.x_sentence : cache.x_path, filters_[k].value, window_of(k), d_conv,
                                filters_[k].grad, filter_bias_[k].grad, sentence ? &d_x_sentence : &d_x_path);
        }
        embed_rows_backward(e.sentence, d_x_sentence);
        embed_rows_backward(e.path, d_x_path);
    }

    CnnConfig config_;
    CnnVocabularies vocab_;
    int class_count_ = 0;
    nn::Parameter emb_word_, emb_pos_, emb_chunk_, emb_ne_, emb_dep_, emb_to_chem_, emb_to_gene_;
    std::vector<nn::Parameter> filters_;      ///< sentence banks then path banks, one per window
    std::vector<nn::Parameter> filter_bias_;
    nn::Parameter out_w_, out_b_;
};


/// Trains a CNN from scratch. Vocabularies come from `train` only.
inline CnnModel cnn_train(std::span<const RelationInstance> train, std::span<const RelationInstance> dev,
                          const CnnConfig& config, const LabelSet& labels, std::uint64_t seed,
                          std::vector<EpochLog>* log = nullptr) {
    if (train.empty()) throw ValidationError("cnn_train: empty training set");
    CnnModel model(config, CnnVocabularies::build(train), labels.size());
    Rng init_rng(derive_seed(seed, 1));
    model.initialize(init_rng);
    if (!config.word_vectors.empty()) {
        const std::size_t filled =
            nn::load_word_vectors(config.word_vectors, model.vocabularies().words, model.word_embeddings().value);
        std::cerr << "cnn: " << filled << " of " << model.vocabularies().words.size()
                  << " words initialized from " << config.word_vectors << '\n';
    }
    std::vector<CnnInstanceEncoding> enc;
    enc.reserve(train.size());
    for (const auto& inst : train) enc.push_back(encode_instance(inst, model.vocabularies(), config));
    std::vector<CnnInstanceEncoding> dev_enc;
    std::vector<Label> dev_gold;
    for (const auto& inst : dev) {
        dev_enc.push_back(encode_instance(inst, model.vocabularies(), config));
        dev_gold.push_back(inst.label());
    }

    Rng shuffle_rng(derive_seed(seed, 2));
    Rng dropout_rng(derive_seed(seed, 3));
    nn::AdamState adam{config.adam, 0, {}, {}};
    auto all = model.parameters();
    auto trainable = model.trainable_parameters();
    auto step = [&](std::size_t i) { return model.accumulate_gradient(enc[i], train[i].label(), true, dropout_rng); };
    auto evaluate = [&] {
        std::vector<Label> pred;
        pred.reserve(dev_enc.size());
        for (const auto& e : dev_enc) {
            Eigen::Index best = 0;
            model.forward(e).scores.row(0).maxCoeff(&best);
            pred.push_back(Label{static_cast<int>(best)});
        }
        return instance_scores(pred, dev_gold).f1;
    };
    auto entries = detail::train_minibatch(enc.size(), config.epochs, config.batch_size, config.patience, all,
                                           trainable, adam, 0.0, shuffle_rng, step, evaluate, !dev.empty());
    if (log != nullptr) *log = std::move(entries);
    return model;
}

}  // namespace chemprot
