#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace chemprot;
namespace fs = std::filesystem;

namespace {

Config tiny_config() {
    Config c = desk_profile();
    c.cnn.word_dim = 8;
    c.cnn.pos_dim = c.cnn.chunk_dim = c.cnn.ne_dim = c.cnn.dep_dim = c.cnn.position_dim = 4;
    c.cnn.filters = 4;
    c.cnn.epochs = 3;
    c.rnn.word_dim = 8;
    c.rnn.pos_dim = c.rnn.chunk_dim = c.rnn.position_dim = 4;
    c.rnn.hidden = 6;
    c.rnn.epochs = 3;
    c.forest.trees = 15;
    return c;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("chemprot_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Folds, HundredDocumentsSplitEvenly) {
    const auto corpus = generate_synthetic_corpus(100, 1);
    const FoldPlan plan = make_folds(corpus, 3);
    ASSERT_EQ(plan.slices.size(), 5u);
    std::set<std::size_t> all;
    for (int f = 0; f < kFoldCount; ++f) {
        EXPECT_EQ(plan.metatrain(f).size(), 20u);
        EXPECT_EQ(plan.basetrain(f).size(), 80u);
        for (std::size_t i : plan.metatrain(f)) EXPECT_TRUE(all.insert(i).second) << "document in two slices";
        const auto base = plan.basetrain(f);
        for (std::size_t i : plan.metatrain(f)) EXPECT_FALSE(std::binary_search(base.begin(), base.end(), i));
    }
    EXPECT_EQ(all.size(), 100u);
    EXPECT_EQ(make_folds(corpus, 3).slices, plan.slices);
    EXPECT_NE(make_folds(corpus, 4).slices, plan.slices);
}

TEST(Folds, UnevenSizesDifferByAtMostOne) {
    const auto slices = partition_documents(23, 5, 9);
    std::size_t lo = 100, hi = 0, total = 0;
    for (const auto& s : slices) {
        lo = std::min(lo, s.size());
        hi = std::max(hi, s.size());
        total += s.size();
    }
    EXPECT_EQ(total, 23u);
    EXPECT_LE(hi - lo, 1u);
}

TEST(Folds, TooFewDocumentsRejected) {
    const auto corpus = generate_synthetic_corpus(4, 1);
    EXPECT_THROW(make_folds(corpus, 1), ValidationError);
}

TEST(Folds, HoldOutIsDisjoint) {
    const auto corpus = generate_synthetic_corpus(50, 2);
    const auto [rest, held] = hold_out(corpus, 0.2, 5);
    EXPECT_EQ(held.documents.size(), 10u);
    EXPECT_EQ(rest.documents.size(), 40u);
    std::set<std::string> ids;
    for (const auto& d : rest.documents) ids.insert(d.id);
    for (const auto& d : held.documents) EXPECT_TRUE(ids.insert(d.id).second);
}

TEST(Scorer, HandComputedMicroExample) {
    const Scores s = scores_from_counts(3, 2, 4);
    EXPECT_EQ(format_metric(s.precision), "0.6000");
    EXPECT_EQ(format_metric(s.recall), "0.4286");
    EXPECT_EQ(format_metric(s.f1), "0.5000");
}

TEST(Scorer, TupleMatching) {
    const std::vector<RelationTuple> gold = {{"D1", "CPR:4", "T1", "T2"}, {"D1", "CPR:3", "T3", "T2"},
                                             {"D2", "CPR:9", "T1", "T4"}};
    const std::vector<RelationTuple> pred = {{"D1", "CPR:4", "T1", "T2"},
                                             {"D1", "CPR:4", "T3", "T2"},  // wrong label
                                             {"D2", "NEG", "T1", "T4"},    // ignored
                                             {"D1", "CPR:4", "T1", "T2"}}; // duplicate
    const Scores s = evaluate(pred, gold);
    EXPECT_EQ(s.tp, 1u);
    EXPECT_EQ(s.fp, 1u);
    EXPECT_EQ(s.fn, 2u);
}

TEST(Scorer, PerfectAndEmptyConventions) {
    const std::vector<RelationTuple> gold = {{"D1", "CPR:4", "T1", "T2"}};
    const Scores perfect = evaluate(gold, gold);
    EXPECT_EQ(perfect.precision, 1.0);
    EXPECT_EQ(perfect.recall, 1.0);
    EXPECT_EQ(perfect.f1, 1.0);
    const Scores empty = evaluate({}, gold);
    EXPECT_EQ(empty.precision, 0.0);
    EXPECT_EQ(empty.recall, 0.0);
    EXPECT_EQ(empty.f1, 0.0);
    const Scores nothing = evaluate({}, {});
    EXPECT_EQ(nothing.f1, 0.0);
}

TEST(Synthetic, DocumentsAreValidAndDeterministic) {
    const auto a = generate_synthetic_corpus(50, 3);
    ASSERT_EQ(a.documents.size(), 50u);
    for (const auto& d : a.documents) EXPECT_NO_THROW(detail::validate_document(d));
    std::ostringstream sa, sb;
    write_corpus(a, sa);
    write_corpus(generate_synthetic_corpus(50, 3), sb);
    EXPECT_EQ(sa.str(), sb.str());
    std::ostringstream sc;
    write_corpus(generate_synthetic_corpus(50, 4), sc);
    EXPECT_NE(sa.str(), sc.str());
}

TEST(Synthetic, EveryLabelOccurs) {
    const auto corpus = generate_synthetic_corpus(50, 3);
    const LabelSet labels;
    std::set<int> seen;
    for (const auto& inst : labeled_instances(corpus, labels)) seen.insert(inst.label().id);
    EXPECT_EQ(seen.size(), 6u);
}

// Gold labels are reproducible from the surface text alone.
TEST(Synthetic, RegexOracleRecoversGold) {
    const auto corpus = generate_synthetic_corpus(200, 1);
    const testsupport::TriggerRegexOracle oracle;
    const Scores s = evaluate(oracle.predict(corpus), gold_tuples(corpus, LabelSet{}));
    EXPECT_GE(s.f1, 0.95);
}

TEST(Pipeline, TrainFoldWritesModelsAndAvoidsLeakage) {
    AnnotatedCorpus corpus = generate_synthetic_corpus(30, 5);
    const FoldPlan plan = make_folds(corpus, 2);
    // A word that only occurs in a metatrain document.
    auto& doc = corpus.documents[plan.metatrain(0).front()];
    for (auto& t : doc.sentences[0].tokens) {
        if (t.surface == "." || t.surface == "was" || t.surface == "by" || t.surface == "the") {
            t.surface = "zzmetaonly";
            break;
        }
    }
    const fs::path dir = scratch_dir("fold");
    FoldTrainingReport report;
    const FoldModels m = train_fold(corpus, plan, 0, tiny_config(), 2, dir, nullptr, &report);
    for (const auto& f : fold_model_files()) EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_EQ(report.meta_width, 17u);
    EXPECT_GT(report.metatrain_instances, 0u);
    EXPECT_GT(report.dev_instances, 0u);
    EXPECT_FALSE(m.cnn.vocabularies().words.contains("zzmetaonly"));
    EXPECT_FALSE(m.rnn.vocabulary().words.contains("zzmetaonly"));
    std::set<std::string> base_words;
    for (std::size_t i : plan.basetrain(0)) {
        for (const auto& s : corpus.documents[i].sentences) {
            for (const auto& t : s.tokens) base_words.insert(detail::lowercase(t.surface));
        }
    }
    for (const auto& w : m.cnn.vocabularies().words.symbols()) {
        if (w != "<PAD>" && w != "<UNK>") EXPECT_TRUE(base_words.count(w)) << w;
    }

    const FoldModels back = FoldModels::load(dir);
    const AnnotatedCorpus meta = subset(corpus, plan.metatrain(0));
    for (const auto& inst : labeled_instances(meta, LabelSet{})) {
        const BaseOutputs o = m.base_outputs(inst);
        const BaseOutputs p = back.base_outputs(inst);
        EXPECT_EQ(o.svm_scores, p.svm_scores);
        EXPECT_EQ(o.rnn_scores, p.rnn_scores);
        EXPECT_EQ(m.combine(o, Combiner::Stacking, false), back.combine(p, Combiner::Stacking, false));
        EXPECT_EQ(m.combine(o, Combiner::Voting, false), vote(o.svm_label, o.cnn_label, o.rnn_label));
        // The CNN block of the meta-features is pre-softmax.
        const MetaFeatures features = FoldModels::meta_features(o);
        ASSERT_EQ(features.size(), 17u);
        nn::Matrix block(1, 6);
        for (int k = 0; k < 6; ++k) block(0, k) = features.values()[static_cast<std::size_t>(6 + k)];
        EXPECT_LT((nn::softmax(block) - o.cnn_probabilities).cwiseAbs().maxCoeff(), 1e-9);
    }
    fs::remove(dir / "rnn.params");
    EXPECT_THROW(FoldModels::load(dir), IoError);
    fs::remove_all(dir);
}

TEST(Pipeline, RunAllWritesSummary) {
    const auto corpus = generate_synthetic_corpus(40, 6);
    Config c = tiny_config();
    c.pipeline.folds = {1};
    const fs::path dir = scratch_dir("runall");
    const RunAllResult r = run_all(corpus, c, 4, dir);
    ASSERT_EQ(r.results.size(), 5u);
    for (const auto& name : {"test_documents.txt", "test_gold.tsv", "folds.tsv", "metrics.tsv", "fold1/voting.tsv",
                             "fold1/stacking.tsv", "fold1/svm.tsv", "fold1/stacker.forest"}) {
        EXPECT_TRUE(fs::exists(dir / name)) << name;
    }
    const std::string summary = slurp(dir / "metrics.tsv");
    EXPECT_EQ(summary.rfind("run_id\tcombiner\tfold\tP\tR\tF\n", 0), 0u);
    EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 6);
    for (const auto& res : r.results) ASSERT_TRUE(res.scores.has_value());
    fs::remove_all(dir);
}

TEST(Config, ProfilesDifferInSize) {
    const Config desk = desk_profile(), paper = paper_profile();
    EXPECT_EQ(desk.cnn.word_dim, 50);
    EXPECT_EQ(desk.cnn.filters, 16);
    EXPECT_EQ(desk.rnn.hidden, 64);
    EXPECT_EQ(desk.forest.trees, 500);
    EXPECT_EQ(paper.cnn.word_dim, 300);
    EXPECT_EQ(paper.rnn.hidden, 2048);
    EXPECT_EQ(paper.forest.trees, 50000);
    EXPECT_THROW(profile_config("huge"), ConfigError);
}

TEST(Config, OverridesApply) {
    std::istringstream in(
        "# overrides\n"
        "[cnn]\nfilters = 32\nwindows = [2, 4, 6]\nlearning_rate = 0.01\n"
        "[rnn]\ngamma = 1.5\n"
        "[ensemble.vote]\nunanimous = true\n"
        "[pipeline]\nfolds = [0, 2]\nrun_id = \"exp 1\"\n");
    const Config c = apply_config(desk_profile(), in);
    EXPECT_EQ(c.cnn.filters, 32);
    EXPECT_EQ(c.cnn.windows, (std::vector<int>{2, 4, 6}));
    EXPECT_DOUBLE_EQ(c.cnn.adam.lr, 0.01);
    EXPECT_DOUBLE_EQ(c.rnn.ranking.gamma, 1.5);
    EXPECT_TRUE(c.vote_unanimous);
    EXPECT_EQ(c.pipeline.folds, (std::vector<int>{0, 2}));
    EXPECT_EQ(c.pipeline.run_id, "exp 1");
    EXPECT_EQ(c.rnn.hidden, 64);  // untouched
}

TEST(Config, ErrorsAreReported) {
    std::istringstream unknown("[cnn]\nfliters = 3\n");
    EXPECT_THROW(apply_config(desk_profile(), unknown), ConfigError);
    std::istringstream type("[cnn]\nfilters = \"many\"\n");
    EXPECT_THROW(apply_config(desk_profile(), type), ConfigError);
    std::istringstream invalid("[cnn]\ndropout = 1.5\n");
    EXPECT_THROW(apply_config(desk_profile(), invalid), ConfigError);
    std::istringstream syntax("[cnn]\n\nfilters 3\n");
    try {
        apply_config(desk_profile(), syntax);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}
