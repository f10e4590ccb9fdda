#pragma once

// Cross-validation protocol: five rotating document slices; in each fold the
// base models train on the other 80% and the stacker on the held-out 20%.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "chemprot/cnn.hpp"
#include "chemprot/config.hpp"
#include "chemprot/corpus.hpp"
#include "chemprot/ensemble.hpp"
#include "chemprot/metrics.hpp"
#include "chemprot/random.hpp"
#include "chemprot/rnn.hpp"
#include "chemprot/svm.hpp"

namespace chemprot {

inline constexpr int kFoldCount = 5;

// ---------------------------------------------------------------------------
// Document partitions

struct FoldPlan {
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> slices;  ///< document indices, ascending within a slice

    const std::vector<std::size_t>& metatrain(int fold) const { return slices.at(static_cast<std::size_t>(fold)); }

    std::vector<std::size_t> basetrain(int fold) const {
        std::vector<std::size_t> out;
        for (int f = 0; f < static_cast<int>(slices.size()); ++f) {
            if (f == fold) continue;
            out.insert(out.end(), slices[static_cast<std::size_t>(f)].begin(), slices[static_cast<std::size_t>(f)].end());
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

/// Seeded shuffle of document indices cut into `parts` near-equal slices.
inline std::vector<std::vector<std::size_t>> partition_documents(std::size_t n, int parts, std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<std::size_t> order = rng.permutation(n);
    std::vector<std::vector<std::size_t>> slices(static_cast<std::size_t>(parts));
    std::size_t pos = 0;
    for (int p = 0; p < parts; ++p) {
        const std::size_t take = n / static_cast<std::size_t>(parts) +
                                 (static_cast<std::size_t>(p) < n % static_cast<std::size_t>(parts) ? 1 : 0);
        auto& s = slices[static_cast<std::size_t>(p)];
        s.assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + take));
        std::sort(s.begin(), s.end());
        pos += take;
    }
    return slices;
}

inline FoldPlan make_folds(const AnnotatedCorpus& corpus, std::uint64_t seed) {
    if (corpus.documents.size() < static_cast<std::size_t>(kFoldCount)) {
        throw ValidationError("make_folds: need at least 5 documents, got " + std::to_string(corpus.documents.size()));
    }
    return {seed, partition_documents(corpus.documents.size(), kFoldCount, derive_seed(seed, 0xF01D))};
}

inline AnnotatedCorpus subset(const AnnotatedCorpus& corpus, const std::vector<std::size_t>& indices) {
    AnnotatedCorpus out;
    out.documents.reserve(indices.size());
    for (std::size_t i : indices) out.documents.push_back(corpus.documents.at(i));
    return out;
}

/// Splits off round(fraction * N) documents chosen by seed. Returns (rest, held out).
inline std::pair<AnnotatedCorpus, AnnotatedCorpus> hold_out(const AnnotatedCorpus& corpus, double fraction,
                                                            std::uint64_t seed) {
    const std::size_t n = corpus.documents.size();
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    Rng rng(seed);
    std::vector<std::size_t> order = rng.permutation(n);
    std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(held.begin(), held.end());
    std::sort(rest.begin(), rest.end());
    return {subset(corpus, rest), subset(corpus, held)};
}

inline void write_fold_plan(const FoldPlan& plan, const AnnotatedCorpus& corpus, std::ostream& out) {
    for (std::size_t f = 0; f < plan.slices.size(); ++f) {
        for (std::size_t i : plan.slices[f]) out << f << '\t' << corpus.documents[i].id << '\n';
    }
}

// ---------------------------------------------------------------------------
// Labeled training material

/// Candidates with gold labels attached (multi-label pairs duplicated). The
/// instances point into `corpus`, which must outlive them.
inline std::vector<RelationInstance> labeled_instances(const AnnotatedCorpus& corpus, const LabelSet& labels) {
    return attach_gold_labels(generate_candidates(corpus).instances, corpus, labels).instances;
}

// ---------------------------------------------------------------------------
// Fold models

enum class Combiner { Voting, Stacking };

inline const char* to_string(Combiner c) { return c == Combiner::Voting ? "voting" : "stacking"; }

inline Combiner parse_combiner(const std::string& s) {
    if (s == "voting") return Combiner::Voting;
    if (s == "stacking") return Combiner::Stacking;
    throw ConfigError("unknown combiner '" + s + "' (expected voting or stacking)");
}

/// Everything the three base models say about one instance.
struct BaseOutputs {
    std::vector<double> svm_scores;
    nn::Matrix cnn_scores;         ///< pre-softmax, 1 x K
    nn::Matrix cnn_probabilities;  ///< 1 x K
    std::vector<double> rnn_scores;
    Label svm_label;
    Label cnn_label;
    Label rnn_label;
};

inline const std::vector<std::string>& fold_model_files() {
    static const std::vector<std::string> files{"svm.model", "cnn.params", "rnn.params", "stacker.forest"};
    return files;
}

struct FoldModels {
    LabelSet labels;
    SvmClassifier svm;
    CnnModel cnn;
    RnnModel rnn;
    RandomForest stacker;

    BaseOutputs base_outputs(const RelationInstance& inst) const {
        BaseOutputs o;
        o.svm_scores = svm.decision_scores(inst);
        const CnnOutput c = cnn.forward(inst);
        o.cnn_scores = c.scores;
        o.cnn_probabilities = c.probabilities;
        o.rnn_scores = rnn.scores(inst);
        o.svm_label = argmax_label(o.svm_scores);
        o.cnn_label = argmax_label(std::span<const double>(c.scores.data(), static_cast<std::size_t>(c.scores.size())));
        o.rnn_label = rnn_predict(o.rnn_scores);
        return o;
    }

    static MetaFeatures meta_features(const BaseOutputs& o) {
        return build_meta_features(
            o.svm_scores, std::span<const double>(o.cnn_scores.data(), static_cast<std::size_t>(o.cnn_scores.size())),
            o.rnn_scores);
    }

    Label combine(const BaseOutputs& o, Combiner combiner, bool unanimous) const {
        if (combiner == Combiner::Voting) return vote(o.svm_label, o.cnn_label, o.rnn_label, unanimous);
        return stacker.predict(meta_features(o).values());
    }

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        svm.save(dir / "svm.model");
        cnn.save(dir / "cnn.params");
        rnn.save(dir / "rnn.params");
        stacker.save(dir / "stacker.forest");
    }

    static FoldModels load(const std::filesystem::path& dir) {
        for (const auto& f : fold_model_files()) {
            if (!std::filesystem::exists(dir / f)) throw IoError("missing model file " + (dir / f).string());
        }
        FoldModels m;
        m.svm = SvmClassifier::load(dir / "svm.model");
        m.labels = m.svm.labels();
        m.cnn = CnnModel::load(dir / "cnn.params");
        m.rnn = RnnModel::load(dir / "rnn.params");
        m.stacker = RandomForest::load(dir / "stacker.forest", MetaFeatures::layout(m.labels));
        if (m.cnn.class_count() != m.labels.size() || m.rnn.positive_count() != m.labels.positive_count() ||
            m.stacker.class_count() != m.labels.size()) {
            throw Error("model", dir.string() + ": base models disagree on the label set");
        }
        return m;
    }
};

/// Per-fold seed for every random stream used while training that fold.
inline std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    return derive_seed(seed, 0x1000 + static_cast<std::uint64_t>(fold));
}

struct FoldTrainingReport {
    std::size_t basetrain_instances = 0;
    std::size_t dev_instances = 0;
    std::size_t metatrain_instances = 0;
    std::size_t meta_width = 0;
    std::vector<EpochLog> cnn_log;
    std::vector<EpochLog> rnn_log;
};

/// Trains the three base models on the fold's basetrain documents and the
/// stacker on meta-features of its metatrain documents. Writes the four model
/// files when `out_dir` is nonempty.
inline FoldModels train_fold(const AnnotatedCorpus& corpus, const FoldPlan& plan, int fold, const Config& config,
                             std::uint64_t seed, const std::filesystem::path& out_dir = {},
                             std::ostream* log = nullptr, FoldTrainingReport* report = nullptr) {
    if (fold < 0 || fold >= static_cast<int>(plan.slices.size())) {
        throw ConfigError("fold index " + std::to_string(fold) + " out of range");
    }
    const LabelSet labels = config.labels();
    const std::uint64_t fs = fold_seed(seed, fold);
    const AnnotatedCorpus base = subset(corpus, plan.basetrain(fold));
    const AnnotatedCorpus meta = subset(corpus, plan.metatrain(fold));
    // The neural models pick their best epoch on a small slice of basetrain.
    const auto [fit_docs, dev_docs] = hold_out(base, config.pipeline.dev_fraction, derive_seed(fs, 5));

    const auto base_inst = labeled_instances(base, labels);
    const auto fit_inst = labeled_instances(fit_docs, labels);
    const auto dev_inst = labeled_instances(dev_docs, labels);
    const auto meta_inst = labeled_instances(meta, labels);
    if (base_inst.empty() || fit_inst.empty()) throw ValidationError("fold " + std::to_string(fold) + ": no training candidates");

    auto stamp = [&, t0 = std::chrono::steady_clock::now()](const std::string& what) {
        if (log == nullptr) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        *log << "fold " << fold << ": " << what << " (" << std::fixed << std::setprecision(1) << s << "s)\n"
             << std::defaultfloat;
    };

    FoldModels m;
    m.labels = labels;
    SvmParams svm_params = config.svm;
    svm_params.seed = derive_seed(fs, 1);
    m.svm = SvmClassifier::train(base_inst, labels, config.keyword_lexicon(), svm_params);
    stamp("svm trained on " + std::to_string(base_inst.size()) + " instances");

    FoldTrainingReport rep;
    m.cnn = cnn_train(fit_inst, dev_inst, config.cnn, labels, derive_seed(fs, 2), &rep.cnn_log);
    stamp("cnn trained, " + std::to_string(rep.cnn_log.size()) + " epochs");
    m.rnn = rnn_train(fit_inst, dev_inst, config.rnn, labels, derive_seed(fs, 3), &rep.rnn_log);
    stamp("rnn trained, " + std::to_string(rep.rnn_log.size()) + " epochs");

    std::vector<std::vector<double>> xs;
    std::vector<Label> ys;
    xs.reserve(meta_inst.size());
    for (const auto& inst : meta_inst) {
        xs.push_back(FoldModels::meta_features(m.base_outputs(inst)).values());
        ys.push_back(inst.label());
    }
    if (xs.empty()) throw ValidationError("fold " + std::to_string(fold) + ": no metatrain candidates for the stacker");
    ForestParams fp = config.forest;
    fp.seed = derive_seed(fs, 4);
    m.stacker = RandomForest::train(xs, ys, labels.size(), MetaFeatures::layout(labels), fp);
    stamp("stacker trained on " + std::to_string(xs.size()) + " meta vectors");

    rep.basetrain_instances = base_inst.size();
    rep.dev_instances = dev_inst.size();
    rep.metatrain_instances = meta_inst.size();
    rep.meta_width = xs.front().size();
    if (report != nullptr) *report = std::move(rep);
    if (!out_dir.empty()) m.save(out_dir);
    return m;
}

// ---------------------------------------------------------------------------
// Prediction runs

struct RunResult {
    std::string run_id;
    std::string combiner;  ///< voting, stacking, or a base model name
    int fold = 0;
    std::optional<Scores> scores;  ///< absent without gold
    std::filesystem::path predictions;
};

/// Predicted tuples for every candidate, in candidate order (NEG included).
struct RunPredictions {
    std::vector<RelationTuple> voting;
    std::vector<RelationTuple> stacking;
    std::vector<RelationTuple> svm;
    std::vector<RelationTuple> cnn;
    std::vector<RelationTuple> rnn;
};

inline RunPredictions predict_all(const AnnotatedCorpus& corpus, const FoldModels& models, bool unanimous) {
    RunPredictions out;
    const auto cands = generate_candidates(corpus);
    auto row = [&](const RelationInstance& inst, Label l) {
        return RelationTuple{inst.doc_id(), models.labels.name(l), inst.chem().id, inst.gene().id};
    };
    for (const auto& inst : cands.instances) {
        const BaseOutputs o = models.base_outputs(inst);
        out.svm.push_back(row(inst, o.svm_label));
        out.cnn.push_back(row(inst, o.cnn_label));
        out.rnn.push_back(row(inst, o.rnn_label));
        out.voting.push_back(row(inst, models.combine(o, Combiner::Voting, unanimous)));
        out.stacking.push_back(row(inst, models.combine(o, Combiner::Stacking, unanimous)));
    }
    return out;
}

/// One combiner over a test corpus. Metrics are computed only when `gold` is
/// given; the prediction file is written either way.
inline RunResult predict_run(const AnnotatedCorpus& corpus, const FoldModels& models, Combiner combiner,
                             const std::filesystem::path& out_file, const std::vector<RelationTuple>* gold,
                             bool unanimous = false, const std::string& run_id = "run", int fold = 0) {
    std::vector<RelationTuple> rows;
    for (const auto& inst : generate_candidates(corpus).instances) {
        const Label l = models.combine(models.base_outputs(inst), combiner, unanimous);
        rows.push_back({inst.doc_id(), models.labels.name(l), inst.chem().id, inst.gene().id});
    }
    write_predictions(rows, out_file);
    RunResult r{run_id, to_string(combiner), fold, std::nullopt, out_file};
    if (gold != nullptr) r.scores = evaluate(rows, *gold);
    return r;
}

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline void write_summary(const std::vector<RunResult>& results, std::ostream& out) {
    out << "run_id\tcombiner\tfold\tP\tR\tF\n";
    for (const auto& r : results) {
        out << r.run_id << '\t' << r.combiner << '\t' << r.fold;
        if (r.scores) {
            out << '\t' << format_metric(r.scores->precision) << '\t' << format_metric(r.scores->recall) << '\t'
                << format_metric(r.scores->f1);
        } else {
            out << "\t-\t-\t-";
        }
        out << '\n';
    }
}

struct RunAllResult {
    std::vector<RunResult> results;
    std::filesystem::path summary;
};

/// Full protocol. Without `test`, a seeded slice of `corpus` is held out as
/// the test set first. Per fold, predictions of every base model and both
/// combiners are written under `out_dir/fold<i>/`, and all scores go to
/// `out_dir/metrics.tsv`.
inline RunAllResult run_all(const AnnotatedCorpus& corpus, const Config& config, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const AnnotatedCorpus* test = nullptr,
                            std::ostream* log = nullptr) {
    std::filesystem::create_directories(out_dir);
    AnnotatedCorpus train_part;
    AnnotatedCorpus test_part;
    if (test != nullptr) {
        train_part = corpus;
        test_part = *test;
    } else {
        std::tie(train_part, test_part) = hold_out(corpus, config.pipeline.test_fraction, derive_seed(seed, 0x7E57));
    }
    if (test_part.documents.empty()) throw ValidationError("run-all: empty test set");
    {
        std::ofstream ids(out_dir / "test_documents.txt", std::ios::binary);
        for (const auto& d : test_part.documents) ids << d.id << '\n';
    }
    const LabelSet labels = config.labels();
    const std::vector<RelationTuple> gold = gold_tuples(test_part, labels);
    write_predictions(gold, out_dir / "test_gold.tsv");

    const FoldPlan plan = make_folds(train_part, seed);
    {
        std::ofstream f(out_dir / "folds.tsv", std::ios::binary);
        write_fold_plan(plan, train_part, f);
    }
    RunAllResult out;
    for (int fold : config.pipeline.folds) {
        const auto dir = out_dir / ("fold" + std::to_string(fold));
        const FoldModels models = train_fold(train_part, plan, fold, config, seed, dir, log);
        const RunPredictions p = predict_all(test_part, models, config.vote_unanimous);
        const std::pair<const char*, const std::vector<RelationTuple>*> runs[] = {
            {"svm", &p.svm}, {"cnn", &p.cnn}, {"rnn", &p.rnn}, {"voting", &p.voting}, {"stacking", &p.stacking}};
        for (const auto& [name, rows] : runs) {
            const auto file = dir / (std::string(name) + ".tsv");
            write_predictions(*rows, file);
            RunResult r{config.pipeline.run_id, name, fold, evaluate(*rows, gold), file};
            if (log != nullptr) {
                *log << "fold " << fold << " " << name << ": P=" << format_metric(r.scores->precision)
                     << " R=" << format_metric(r.scores->recall) << " F=" << format_metric(r.scores->f1) << '\n';
            }
            out.results.push_back(std::move(r));
        }
    }
    out.summary = out_dir / "metrics.tsv";
    std::ofstream summary(out.summary, std::ios::binary);
    if (!summary) throw IoError("cannot write " + out.summary.string());
    write_summary(out.results, summary);
    return out;
}

}  // namespace chemprot
