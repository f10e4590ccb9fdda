// chemprot: command-line driver for corpus handling, training, prediction
// and the cross-validated evaluation protocol.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "chemprot/chemprot.hpp"

namespace fs = std::filesystem;
using namespace chemprot;

namespace {

struct Common {
    std::uint64_t seed = 1;
    std::string profile = "desk";
    std::string config;

    Config load() const { return load_config(profile, config); }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
    cmd->add_option("--profile", c.profile, "size profile")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
    cmd->add_option("--config", c.config, "TOML-style override file")->check(CLI::ExistingFile);
}

void print_scores(const std::string& name, const Scores& s) {
    std::cout << name << "\tP=" << format_metric(s.precision) << "\tR=" << format_metric(s.recall)
              << "\tF=" << format_metric(s.f1) << "\t(tp=" << s.tp << " fp=" << s.fp << " fn=" << s.fn << ")\n";
}

/// Gold relations from either a relation TSV or an annotated corpus.
std::vector<RelationTuple> load_gold(const fs::path& path, const LabelSet& labels) {
    if (path.extension() == ".jsonl" || path.extension() == ".json") return gold_tuples(parse_corpus(path), labels);
    return read_relations(path);
}

int cmd_ingest(const fs::path& input, const std::string& output, const Config& config) {
    const AnnotatedCorpus corpus = parse_corpus(input);
    const auto cands = generate_candidates(corpus);
    const auto labeled = attach_gold_labels(cands.instances, corpus, config.labels());
    std::size_t mentions = 0, relations = 0, positives = 0;
    for (const auto& d : corpus.documents) {
        mentions += d.mentions.size();
        relations += d.relations.size();
    }
    for (const auto& i : labeled.instances) positives += i.label().is_negative() ? 0 : 1;
    std::cout << "documents\t" << corpus.documents.size() << "\nsentences\t" << corpus.sentence_count()
              << "\nmentions\t" << mentions << "\nrelations\t" << relations << "\ncandidates\t"
              << cands.instances.size() << "\npositive_instances\t" << positives << "\noverlapping_pairs_skipped\t"
              << cands.overlapping_skipped << "\ncross_sentence_relations_dropped\t" << labeled.dropped_cross_sentence
              << "\nunknown_label_relations_dropped\t" << labeled.dropped_unknown_label << '\n';
    if (!output.empty()) write_corpus(corpus, fs::path(output));
    return 0;
}

int cmd_predict(const fs::path& input, const fs::path& models_dir, const std::string& combiner,
                const fs::path& output, const std::string& gold_path, const Config& config) {
    const AnnotatedCorpus corpus = parse_corpus(input);
    const FoldModels models = FoldModels::load(models_dir);
    std::vector<RelationTuple> gold;
    const std::vector<RelationTuple>* gold_ptr = nullptr;
    if (!gold_path.empty()) {
        gold = load_gold(gold_path, models.labels);
        gold_ptr = &gold;
    }
    const RunResult r = predict_run(corpus, models, parse_combiner(combiner), output, gold_ptr, config.vote_unanimous);
    std::cout << "predictions written to " << r.predictions.string() << '\n';
    if (r.scores) print_scores(r.combiner, *r.scores);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chemical-protein relation extraction: SVM, CNN and Bi-LSTM base models with voting or stacking"};
    app.require_subcommand(1);

    // ingest
    Common ingest_c;
    std::string ingest_in, ingest_out;
    auto* ingest = app.add_subcommand("ingest", "validate an annotated corpus and print statistics");
    ingest->add_option("--input,-i", ingest_in, "corpus (JSON Lines)")->required()->check(CLI::ExistingFile);
    ingest->add_option("--output,-o", ingest_out, "write the normalized corpus here");
    add_common(ingest, ingest_c);

    // synth
    std::size_t synth_docs = 300;
    std::uint64_t synth_seed = 1;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic annotated corpus");
    synth->add_option("--documents,-n", synth_docs, "number of documents")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_seed, "random seed")->capture_default_str();
    synth->add_option("--output,-o", synth_out, "output corpus (JSON Lines)")->required();

    // folds
    std::uint64_t folds_seed = 1;
    std::string folds_in, folds_out;
    auto* folds = app.add_subcommand("folds", "print the 5-fold document partition (fold<TAB>docId)");
    folds->add_option("--input,-i", folds_in, "corpus")->required()->check(CLI::ExistingFile);
    folds->add_option("--seed", folds_seed, "random seed")->capture_default_str();
    folds->add_option("--output,-o", folds_out, "write here instead of stdout");

    // train
    Common train_c;
    std::string train_in, train_dir;
    int train_fold_index = 0;
    auto* train = app.add_subcommand("train", "train the base models and stacker of one fold");
    train->add_option("--input,-i", train_in, "training corpus")->required()->check(CLI::ExistingFile);
    train->add_option("--fold", train_fold_index, "fold index 0-4")->capture_default_str()->check(CLI::Range(0, 4));
    train->add_option("--out-dir,-o", train_dir, "directory for the four model files")->required();
    add_common(train, train_c);

    // predict
    Common predict_c;
    std::string predict_in, predict_models, predict_out, predict_gold, predict_combiner = "voting";
    auto* predict = app.add_subcommand("predict", "label the candidates of a corpus with one fold's models");
    predict->add_option("--input,-i", predict_in, "corpus to label")->required()->check(CLI::ExistingFile);
    predict->add_option("--models,-m", predict_models, "directory written by train")->required()->check(CLI::ExistingDirectory);
    predict->add_option("--combiner", predict_combiner, "ensemble combiner")
        ->check(CLI::IsMember({"voting", "stacking"}))
        ->capture_default_str();
    predict->add_option("--output,-o", predict_out, "prediction TSV")->required();
    predict->add_option("--gold", predict_gold, "gold relations (TSV or corpus) to score against")->check(CLI::ExistingFile);
    add_common(predict, predict_c);

    // evaluate
    std::string eval_pred, eval_gold;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "micro P/R/F of a prediction file");
    evaluate_cmd->add_option("--predictions,-p", eval_pred, "prediction TSV")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--gold,-g", eval_gold, "gold relations (TSV or corpus)")->required()->check(CLI::ExistingFile);

    // run-all
    Common run_c;
    std::string run_in, run_test, run_dir;
    auto* run = app.add_subcommand("run-all", "cross-validated protocol: train every fold, score every combiner");
    run->add_option("--input,-i", run_in, "annotated corpus")->required()->check(CLI::ExistingFile);
    run->add_option("--test", run_test, "separate test corpus (default: hold out a slice of the input)")
        ->check(CLI::ExistingFile);
    run->add_option("--out-dir,-o", run_dir, "output directory")->required();
    std::vector<int> run_folds;
    run->add_option("--fold", run_folds, "restrict to these folds")->check(CLI::Range(0, 4));
    std::string run_combiner;
    run->add_option("--combiner", run_combiner, "only report this combiner (base models are always reported)")
        ->check(CLI::IsMember({"voting", "stacking"}));
    add_common(run, run_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*ingest) return cmd_ingest(ingest_in, ingest_out, ingest_c.load());
        if (*synth) {
            write_corpus(generate_synthetic_corpus(synth_docs, synth_seed), fs::path(synth_out));
            std::cout << "wrote " << synth_docs << " documents to " << synth_out << '\n';
            return 0;
        }
        if (*folds) {
            const AnnotatedCorpus corpus = parse_corpus(fs::path(folds_in));
            const FoldPlan plan = make_folds(corpus, folds_seed);
            if (folds_out.empty()) {
                write_fold_plan(plan, corpus, std::cout);
            } else {
                std::ofstream out(folds_out, std::ios::binary);
                if (!out) throw IoError("cannot write " + folds_out);
                write_fold_plan(plan, corpus, out);
            }
            return 0;
        }
        if (*train) {
            const Config config = train_c.load();
            const AnnotatedCorpus corpus = parse_corpus(fs::path(train_in));
            const FoldPlan plan = make_folds(corpus, train_c.seed);
            FoldTrainingReport report;
            train_fold(corpus, plan, train_fold_index, config, train_c.seed, train_dir, &std::cerr, &report);
            std::cout << "fold " << train_fold_index << ": basetrain " << report.basetrain_instances
                      << " instances, metatrain " << report.metatrain_instances << " instances, meta width "
                      << report.meta_width << "; models in " << train_dir << '\n';
            return 0;
        }
        if (*predict) {
            return cmd_predict(predict_in, predict_models, predict_combiner, predict_out, predict_gold,
                               predict_c.load());
        }
        if (*evaluate_cmd) {
            const auto pred = read_relations(fs::path(eval_pred));
            const auto gold = load_gold(eval_gold, LabelSet{});
            print_scores("micro", evaluate(pred, gold));
            return 0;
        }
        if (*run) {
            Config config = run_c.load();
            if (!run_folds.empty()) config.pipeline.folds = run_folds;
            const AnnotatedCorpus corpus = parse_corpus(fs::path(run_in));
            std::optional<AnnotatedCorpus> test;
            if (!run_test.empty()) test = parse_corpus(fs::path(run_test));
            const RunAllResult result =
                run_all(corpus, config, run_c.seed, run_dir, test ? &*test : nullptr, &std::cerr);
            std::vector<RunResult> shown;
            for (const auto& r : result.results) {
                const bool combiner_row = r.combiner == "voting" || r.combiner == "stacking";
                if (!run_combiner.empty() && combiner_row && r.combiner != run_combiner) continue;
                shown.push_back(r);
            }
            write_summary(shown, std::cout);
            std::cout << "summary: " << result.summary.string() << '\n';
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error [" << e.category() << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
