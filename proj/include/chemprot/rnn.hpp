#pragma once

// Bi-LSTM relation classifier trained with a pairwise ranking loss over the
// positive classes only. The pair's mentions are collapsed to CHEMICAL and
// PROTEIN tokens and rare words become UNK before encoding.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
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

struct RnnConfig {
    int word_dim = 300;
    int pos_dim = 32;
    int chunk_dim = 32;
    int position_dim = 32;
    int hidden = 2048;  ///< per direction
    double recurrent_dropout = 0.2;
    double output_dropout = 0.2;
    nn::AdamConfig adam{0.001, 0.9, 0.999, 1e-8};
    int batch_size = 32;
    int min_word_freq = 5;
    int epochs = 50;
    int patience = 5;
    int position_clip = 30;
    double clip_norm = 5.0;
    bool train_word_embeddings = true;
    nn::RankingLossParams ranking{};
    std::string word_vectors;

    void validate() const {
        for (int d : {word_dim, pos_dim, chunk_dim, position_dim, hidden, batch_size, position_clip}) {
            if (d < 1) throw ConfigError("rnn: dimensions, hidden size, batch size and clip must be >= 1");
        }
        for (double r : {recurrent_dropout, output_dropout}) {
            if (!(r >= 0.0 && r < 1.0)) throw ConfigError("rnn: dropout rates must be in [0, 1)");
        }
    }

    int token_dim() const { return word_dim + pos_dim + chunk_dim + 2 * position_dim; }
};

inline const std::string kUnkToken = "UNK";
inline const std::string kChemicalToken = "CHEMICAL";
inline const std::string kProteinToken = "PROTEIN";

/// Sentence after entity collapsing: the chemical mention is one CHEMICAL
/// token and the gene mention one PROTEIN token.
struct RnnSequence {
    std::vector<std::string> words;
    std::vector<std::string> pos;
    std::vector<std::string> chunk;
    int chem_index = 0;
    int gene_index = 0;

    friend bool operator==(const RnnSequence&, const RnnSequence&) = default;
};

/// Collapses the pair's mention spans. Words are lowercased; other mentions
/// are left as they are. The collapsed token takes the POS and chunk tags of
/// the mention's head token.
inline RnnSequence collapse_entities(const RelationInstance& inst) {
    const Sentence& s = inst.sentence();
    const Span chem = inst.chem().span;
    const Span gene = inst.gene().span;
    RnnSequence out;
    for (int i = 0; i < s.size(); ++i) {
        const Token* t = &s.tokens[static_cast<std::size_t>(i)];
        std::string word;
        if (chem.contains(i) || gene.contains(i)) {
            const bool is_chem = chem.contains(i);
            const Span span = is_chem ? chem : gene;
            if (i != span.first) continue;
            t = &s.tokens[static_cast<std::size_t>(mention_head(s, span))];
            word = is_chem ? kChemicalToken : kProteinToken;
            (is_chem ? out.chem_index : out.gene_index) = static_cast<int>(out.words.size());
        } else {
            word = detail::lowercase(t->surface);
        }
        out.words.push_back(std::move(word));
        out.pos.push_back(t->pos);
        out.chunk.push_back(t->chunk);
    }
    return out;
}

struct RnnVocabulary {
    nn::Vocabulary words{{"<PAD>", kUnkToken, kChemicalToken, kProteinToken}};
    nn::Vocabulary pos;
    nn::Vocabulary chunk;

    /// Words with training frequency >= min_word_freq, counted once per
    /// distinct training sentence after entity collapsing.
    static RnnVocabulary build(std::span<const RelationInstance> train, int min_word_freq) {
        RnnVocabulary v;
        std::map<std::string, int> freq;
        std::set<const Sentence*> seen;
        for (const auto& inst : train) {
            if (!seen.insert(&inst.sentence()).second) continue;
            const RnnSequence seq = collapse_entities(inst);
            for (std::size_t i = 0; i < seq.words.size(); ++i) {
                ++freq[seq.words[i]];
                v.pos.add(seq.pos[i]);
                v.chunk.add(seq.chunk[i]);
            }
        }
        for (const auto& [word, count] : freq) {
            if (count >= min_word_freq) v.words.add(word);
        }
        return v;
    }
};

/// UNK substitution on an already collapsed sequence. Idempotent.
inline RnnSequence rnn_preprocess(RnnSequence seq, const RnnVocabulary& vocab) {
    for (auto& w : seq.words) {
        if (!vocab.words.contains(w)) w = kUnkToken;
    }
    return seq;
}

inline RnnSequence rnn_preprocess(const RelationInstance& inst, const RnnVocabulary& vocab) {
    return rnn_preprocess(collapse_entities(inst), vocab);
}

/// Clipped signed distance to a single-token anchor, as a row index.
inline int position_index_single(int token, int anchor, int clip) {
    return std::clamp(token - anchor, -clip, clip) + clip;
}

struct RnnTokenRow {
    int word = 0, pos = 0, chunk = 0, to_chem = 0, to_gene = 0;
};

inline std::vector<RnnTokenRow> rnn_encode(const RnnSequence& seq, const RnnVocabulary& vocab, int clip) {
    std::vector<RnnTokenRow> rows;
    rows.reserve(seq.words.size());
    for (std::size_t i = 0; i < seq.words.size(); ++i) {
        const int t = static_cast<int>(i);
        rows.push_back({vocab.words.lookup(seq.words[i]), vocab.pos.lookup(seq.pos[i]), vocab.chunk.lookup(seq.chunk[i]),
                        position_index_single(t, seq.chem_index, clip),
                        position_index_single(t, seq.gene_index, clip)});
    }
    return rows;
}

/// All scores negative -> NEG; otherwise the positive class with the highest
/// score (lowest index on ties). A score of exactly 0 counts as positive.
inline Label rnn_predict(std::span<const double> scores) {
    const auto best = std::max_element(scores.begin(), scores.end());
    if (best == scores.end() || *best < 0.0) return kNegative;
    return Label{static_cast<int>(best - scores.begin()) + 1};
}

class RnnModel {
public:
    RnnModel() = default;

    RnnModel(RnnConfig config, RnnVocabulary vocab, int positive_count)
        : config_(std::move(config)), vocab_(std::move(vocab)), positive_count_(positive_count) {
        config_.validate();
        const int clip_rows = 2 * config_.position_clip + 1;
        emb_word_ = nn::Parameter("emb.word", vocab_.words.size(), config_.word_dim);
        emb_pos_ = nn::Parameter("emb.pos", vocab_.pos.size(), config_.pos_dim);
        emb_chunk_ = nn::Parameter("emb.chunk", vocab_.chunk.size(), config_.chunk_dim);
        emb_to_chem_ = nn::Parameter("emb.to_chem", clip_rows, config_.position_dim);
        emb_to_gene_ = nn::Parameter("emb.to_gene", clip_rows, config_.position_dim);
        fwd_ = nn::LstmLayer("lstm.fwd", config_.token_dim(), config_.hidden);
        bwd_ = nn::LstmLayer("lstm.bwd", config_.token_dim(), config_.hidden);
        out_w_ = nn::Parameter("out.w", 2 * config_.hidden, positive_count_);
        out_b_ = nn::Parameter("out.b", 1, positive_count_);
    }

    void initialize(Rng& rng) {
        for (nn::Parameter* e : {&emb_word_, &emb_pos_, &emb_chunk_, &emb_to_chem_, &emb_to_gene_}) {
            nn::init_uniform(e->value, 0.05, rng);
        }
        fwd_.initialize(rng);
        bwd_.initialize(rng);
        nn::init_uniform(out_w_.value, nn::glorot_bound(2 * config_.hidden, positive_count_), rng);
        out_b_.value.setZero();
    }

    const RnnConfig& config() const { return config_; }
    const RnnVocabulary& vocabulary() const { return vocab_; }
    int positive_count() const { return positive_count_; }
    nn::Parameter& word_embeddings() { return emb_word_; }

    std::vector<nn::Parameter*> parameters() { return collect(*this); }
    std::vector<const nn::Parameter*> parameters() const { return collect(*this); }

    std::vector<nn::Parameter*> trainable_parameters() {
        auto p = parameters();
        if (!config_.train_word_embeddings) p.erase(p.begin());
        return p;
    }

    std::vector<RnnTokenRow> encode(const RelationInstance& inst) const {
        return rnn_encode(rnn_preprocess(inst, vocab_), vocab_, config_.position_clip);
    }

    /// Raw, unnormalized positive-class scores (eval mode).
    nn::Matrix forward(std::span<const RnnTokenRow> rows) const {
        Rng unused(0);
        Cache cache;
        return run(rows, false, unused, cache);
    }

    nn::Matrix forward(const RelationInstance& inst) const { return forward(encode(inst)); }

    std::vector<double> scores(const RelationInstance& inst) const {
        const nn::Matrix s = forward(inst);
        return {s.data(), s.data() + s.size()};
    }

    Label predict(const RelationInstance& inst) const { return rnn_predict(scores(inst)); }

    /// Ranking loss for one instance; gradients are added to grad buffers.
    double accumulate_gradient(std::span<const RnnTokenRow> rows, Label gold, bool train, Rng& rng) {
        Cache cache;
        const nn::Matrix s = run(rows, train, rng, cache);
        const std::optional<int> target =
            gold.is_negative() ? std::nullopt : std::optional<int>(gold.id - 1);
        const nn::LossResult loss = nn::ranking_loss(s, target, config_.ranking);
        backward(rows, cache, loss.grad);
        return loss.loss;
    }

    void save(std::ostream& out) const {
        io::Writer w(out);
        w.header("chemprot-rnn", 1);
        w.line("positives", positive_count_);
        w.line("dims", config_.word_dim, config_.pos_dim, config_.chunk_dim, config_.position_dim);
        w.line("hidden", config_.hidden);
        w.line("position_clip", config_.position_clip);
        w.line("dropout", config_.recurrent_dropout, config_.output_dropout);
        w.line("min_word_freq", config_.min_word_freq);
        w.strings("vocab.word", vocab_.words.symbols());
        w.strings("vocab.pos", vocab_.pos.symbols());
        w.strings("vocab.chunk", vocab_.chunk.symbols());
        for (const nn::Parameter* p : parameters()) nn::write_parameter(w, *p);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write RNN checkpoint " + path.string());
        save(out);
    }

    static RnnModel load(std::istream& in, const std::string& source = "rnn checkpoint") {
        io::Reader r(in, source);
        r.header("chemprot-rnn", 1);
        const int positives = r.keyed<int>("positives");
        RnnConfig c;
        c.word_dim = r.keyed<int>("dims");
        c.pos_dim = r.value<int>();
        c.chunk_dim = r.value<int>();
        c.position_dim = r.value<int>();
        c.hidden = r.keyed<int>("hidden");
        c.position_clip = r.keyed<int>("position_clip");
        c.recurrent_dropout = r.keyed<double>("dropout");
        c.output_dropout = r.value<double>();
        c.min_word_freq = r.keyed<int>("min_word_freq");
        RnnVocabulary v;
        v.words = nn::Vocabulary(r.strings("vocab.word"));
        v.pos = nn::Vocabulary(r.strings("vocab.pos"));
        v.chunk = nn::Vocabulary(r.strings("vocab.chunk"));
        RnnModel m(c, std::move(v), positives);
        for (nn::Parameter* p : m.parameters()) nn::read_parameter(r, *p);
        return m;
    }

    static RnnModel load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open RNN checkpoint " + path.string());
        return load(in, path.string());
    }

private:
    struct Cache {
        nn::Matrix x;
        nn::BiLstm lstm;
        nn::Pooled pooled;
        nn::Matrix dropout_mask, dropped;
    };

    template <class Self>
    static std::vector<std::conditional_t<std::is_const_v<Self>, const nn::Parameter*, nn::Parameter*>> collect(
        Self& self) {
        return {&self.emb_word_, &self.emb_pos_, &self.emb_chunk_, &self.emb_to_chem_, &self.emb_to_gene_,
                &self.fwd_.wx,    &self.fwd_.wh,  &self.fwd_.b,     &self.bwd_.wx,       &self.bwd_.wh,
                &self.bwd_.b,     &self.out_w_,   &self.out_b_};
    }

    std::vector<std::pair<const nn::Parameter*, int RnnTokenRow::*>> tables() const {
        return {{&emb_word_, &RnnTokenRow::word},
                {&emb_pos_, &RnnTokenRow::pos},
                {&emb_chunk_, &RnnTokenRow::chunk},
                {&emb_to_chem_, &RnnTokenRow::to_chem},
                {&emb_to_gene_, &RnnTokenRow::to_gene}};
    }

    static std::vector<int> column(std::span<const RnnTokenRow> rows, int RnnTokenRow::*field) {
        std::vector<int> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r.*field);
        return out;
    }

    nn::Matrix run(std::span<const RnnTokenRow> rows, bool train, Rng& rng, Cache& cache) const {
        if (rows.empty()) throw ShapeError("rnn: empty sequence");
        cache.x.resize(static_cast<Eigen::Index>(rows.size()), config_.token_dim());
        Eigen::Index col = 0;
        for (const auto& [table, field] : tables()) {
            const Eigen::Index w = table->value.cols();
            cache.x.middleCols(col, w) = nn::embed(table->value, column(rows, field));
            col += w;
        }
        nn::Matrix fwd_mask, bwd_mask;
        if (train && config_.recurrent_dropout > 0.0) {
            // One mask per sequence and direction, shared across time steps.
            fwd_mask = nn::dropout_mask(1, config_.hidden, config_.recurrent_dropout, rng);
            bwd_mask = nn::dropout_mask(1, config_.hidden, config_.recurrent_dropout, rng);
        }
        cache.lstm = nn::bilstm(cache.x, fwd_, bwd_, fwd_mask, bwd_mask);
        cache.pooled = nn::max_over_time(cache.lstm.output);
        cache.dropped = nn::dropout(cache.pooled.value, config_.output_dropout, rng, train, &cache.dropout_mask);
        nn::Matrix s = nn::dense(cache.dropped, out_w_.value, out_b_.value);
        nn::require_finite(s, "rnn scores");
        return s;
    }

    void backward(std::span<const RnnTokenRow> rows, const Cache& cache, const nn::Matrix& d_scores) {
        nn::Matrix d_dropped = nn::Matrix::Zero(1, 2 * config_.hidden);
        nn::dense_backward(cache.dropped, out_w_.value, d_scores, out_w_.grad, out_b_.grad, &d_dropped);
        const nn::Matrix d_pooled = (d_dropped.array() * cache.dropout_mask.array()).matrix();
        const nn::Matrix d_states = nn::max_over_time_backward(cache.pooled, cache.lstm.output.rows(), d_pooled);
        const nn::Matrix d_x = nn::bilstm_backward(cache.lstm, cache.x, fwd_, bwd_, d_states);
        const std::array<std::pair<nn::Parameter*, int RnnTokenRow::*>, 5> grads{{
            {&emb_word_, &RnnTokenRow::word},
            {&emb_pos_, &RnnTokenRow::pos},
            {&emb_chunk_, &RnnTokenRow::chunk},
            {&emb_to_chem_, &RnnTokenRow::to_chem},
            {&emb_to_gene_, &RnnTokenRow::to_gene},
        }};
        Eigen::Index col = 0;
        for (const auto& [table, field] : grads) {
            const Eigen::Index w = table->value.cols();
            nn::embed_backward(column(rows, field), d_x.middleCols(col, w), table->grad);
            col += w;
        }
    }

    RnnConfig config_;
    RnnVocabulary vocab_;
    int positive_count_ = 0;
    nn::Parameter emb_word_, emb_pos_, emb_chunk_, emb_to_chem_, emb_to_gene_;
    nn::LstmLayer fwd_, bwd_;
    nn::Parameter out_w_, out_b_;
};

inline RnnModel rnn_train(std::span<const RelationInstance> train, std::span<const RelationInstance> dev,
                          const RnnConfig& config, const LabelSet& labels, std::uint64_t seed,
                          std::vector<EpochLog>* log = nullptr) {
    if (train.empty()) throw ValidationError("rnn_train: empty training set");
    RnnModel model(config, RnnVocabulary::build(train, config.min_word_freq), labels.positive_count());
    Rng init_rng(derive_seed(seed, 11));
    model.initialize(init_rng);
    if (!config.word_vectors.empty()) {
        const std::size_t filled =
            nn::load_word_vectors(config.word_vectors, model.vocabulary().words, model.word_embeddings().value);
        std::cerr << "rnn: " << filled << " of " << model.vocabulary().words.size() << " words initialized from "
                  << config.word_vectors << '\n';
    }
    std::vector<std::vector<RnnTokenRow>> enc;
    enc.reserve(train.size());
    for (const auto& inst : train) enc.push_back(model.encode(inst));
    std::vector<std::vector<RnnTokenRow>> dev_enc;
    std::vector<Label> dev_gold;
    for (const auto& inst : dev) {
        dev_enc.push_back(model.encode(inst));
        dev_gold.push_back(inst.label());
    }

    Rng shuffle_rng(derive_seed(seed, 12));
    Rng dropout_rng(derive_seed(seed, 13));
    nn::AdamState adam{config.adam, 0, {}, {}};
    auto all = model.parameters();
    auto trainable = model.trainable_parameters();
    auto step = [&](std::size_t i) { return model.accumulate_gradient(enc[i], train[i].label(), true, dropout_rng); };
    auto evaluate = [&] {
        std::vector<Label> pred;
        pred.reserve(dev_enc.size());
        for (const auto& e : dev_enc) {
            const nn::Matrix s = model.forward(e);
            pred.push_back(rnn_predict(std::span<const double>(s.data(), static_cast<std::size_t>(s.size()))));
        }
        return instance_scores(pred, dev_gold).f1;
    };
    auto entries = detail::train_minibatch(enc.size(), config.epochs, config.batch_size, config.patience, all,
                                           trainable, adam, config.clip_norm, shuffle_rng, step, evaluate,
                                           !dev.empty());
    if (log != nullptr) *log = std::move(entries);
    return model;
}

}  // namespace chemprot
