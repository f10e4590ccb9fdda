#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "support.hpp"

using namespace chemprot;

namespace {

bool has(const FeatureSet& f, const std::string& name) { return std::find(f.begin(), f.end(), name) != f.end(); }

RelationInstance gem_instance(const Document& d, const EntityMention& chem) {
    return RelationInstance(d.id, 0, &d.sentences[0], chem, d.mentions[1], kNegative);
}

}  // namespace

TEST(SvmFeatures, WorkedExample) {
    const Document d = testsupport::gemfibrozil_document();
    const FeatureSet f = extract_features(gem_instance(d, d.mentions[0]), KeywordLexicon::default_lexicon());
    EXPECT_TRUE(has(f, "DIST=6-10"));
    EXPECT_TRUE(has(f, "KEY=inhibit"));
    EXPECT_TRUE(has(f, "KEY=hint:CPR:4"));
    EXPECT_FALSE(has(f, "KEY=agonism"));
    EXPECT_TRUE(has(f, "VWALK=gemfibrozil|nsubj|inhibit"));
    EXPECT_TRUE(has(f, "EWALK=dobj|induction|nmod:of"));
    EXPECT_TRUE(has(f, "WIN:G:L1:lem=of"));
    EXPECT_TRUE(has(f, "WIN:C:R1:lem=,"));
    // Nothing to the left of the chemical.
    for (const auto& x : f) EXPECT_EQ(x.rfind("WIN:C:L", 0), std::string::npos) << x;
}

TEST(SvmFeatures, AdjacentMentionsHaveDistanceZero) {
    const Document d = testsupport::gemfibrozil_document();
    const EntityMention chem{"T9", EntityKind::Chemical, 0, {9, 9}, "of"};
    const FeatureSet f = extract_features(gem_instance(d, chem), KeywordLexicon::default_lexicon());
    EXPECT_TRUE(has(f, "DIST=0"));
    for (const auto& x : f) EXPECT_NE(x.rfind("KEY=", 0), 0u) << x;
}

// Every non-mention token lands in exactly one BOW region.
TEST(SvmFeatures, BagOfWordsPartitionsSentence) {
    const Document d = testsupport::gemfibrozil_document();
    const RelationInstance inst = gem_instance(d, d.mentions[0]);
    const FeatureSet f = extract_features(inst, KeywordLexicon{});
    std::size_t bow = 0, middle = 0;
    for (const auto& x : f) {
        if (x.rfind("BOW:", 0) != 0) continue;
        ++bow;
        middle += x.rfind("BOW:middle=", 0) == 0;
    }
    EXPECT_EQ(bow, 16u - 3u);
    EXPECT_EQ(middle, 9u);
}

TEST(SvmFeatures, DistanceBuckets) {
    EXPECT_EQ(distance_bucket(0), "0");
    EXPECT_EQ(distance_bucket(5), "5");
    EXPECT_EQ(distance_bucket(6), "6-10");
    EXPECT_EQ(distance_bucket(15), "11-15");
    EXPECT_EQ(distance_bucket(16), "16+");
}

TEST(SvmFeatures, LexiconParsing) {
    std::istringstream in("# comment\ninhibit -> CPR:4\nblock\nagonism → CPR:5\n");
    const auto lex = KeywordLexicon::parse(in);
    ASSERT_EQ(lex.entries().size(), 3u);
    EXPECT_EQ(lex.entries()[0].hint, "CPR:4");
    EXPECT_EQ(lex.entries()[1].hint, "");
    EXPECT_EQ(lex.entries()[2].lemma, "agonism");
    std::istringstream bad("two words\n");
    EXPECT_THROW(KeywordLexicon::parse(bad), ParseError);
}

TEST(SvmFeatures, VocabularyCountsDistinctFeatures) {
    const auto corpus = generate_synthetic_corpus(15, 2);
    const auto inst = labeled_instances(corpus, LabelSet{});
    std::vector<FeatureSet> fs;
    std::set<std::string> oracle;
    for (const auto& i : inst) {
        fs.push_back(extract_features(i, KeywordLexicon::default_lexicon()));
        oracle.insert(fs.back().begin(), fs.back().end());
    }
    const auto vocab = FeatureVocabulary::fit(fs);
    EXPECT_EQ(vocab.size(), oracle.size());
    const SparseVector v = vocab.vectorize(fs[0]);
    double total = 0;
    for (const auto& [i, c] : v.entries) total += c;
    EXPECT_EQ(total, static_cast<double>(fs[0].size()));
    EXPECT_TRUE(vocab.vectorize({"never-seen"}).entries.empty());
}

TEST(Svm, BalancedWeightsExample) {
    std::vector<Label> labels(90, Label{0});
    labels.insert(labels.end(), 10, Label{1});
    const auto w = balanced_class_weights(labels, 2);
    EXPECT_DOUBLE_EQ(w[0], 100.0 / 180.0);
    EXPECT_DOUBLE_EQ(w[1], 5.0);
    EXPECT_DOUBLE_EQ(90 * w[0] + 10 * w[1], 100.0);
}

TEST(Svm, BalancedWeightsSumToN) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Label> labels;
        const int n = 1 + static_cast<int>(rng.below(200));
        for (int i = 0; i < n; ++i) labels.push_back(Label{static_cast<int>(rng.below(6))});
        const auto w = balanced_class_weights(labels, 6);
        double sum = 0;
        for (Label l : labels) sum += w[static_cast<std::size_t>(l.id)];
        EXPECT_NEAR(sum, static_cast<double>(n), 1e-9);
    }
}

TEST(Svm, SeparableSixClassReachesFullAccuracy) {
    const auto set = testsupport::separable_clusters(20, 6, 11);
    ASSERT_TRUE(testsupport::perceptron_separable(set, 6));
    SvmParams p;
    p.c = 10.0;
    p.tol = 1e-4;
    SvmTrainingTrace trace;
    const auto model = train_ovr(set.xs, set.ys, 6, p, &trace);
    for (std::size_t i = 0; i < set.xs.size(); ++i) {
        EXPECT_EQ(argmax_label(model.decision_scores(set.xs[i])), set.ys[i]);
    }
    ASSERT_EQ(trace.dual_objective.size(), 6u);
    for (const auto& obj : trace.dual_objective) {
        for (std::size_t e = 1; e < obj.size(); ++e) EXPECT_GE(obj[e], obj[e - 1] - 1e-9);
    }
}

TEST(Svm, DimensionMismatchThrows) {
    const auto set = testsupport::separable_clusters(3, 2, 1);
    const auto model = train_ovr(set.xs, set.ys, 2);
    SparseVector wrong;
    wrong.dimension = set.xs[0].dimension + 1;
    EXPECT_THROW(model.decision_scores(wrong), ShapeError);
    std::vector<Label> short_labels(set.ys.begin(), set.ys.end() - 1);
    EXPECT_THROW(train_ovr(set.xs, short_labels, 2), ShapeError);
}

TEST(Svm, ClassifierSaveLoadRoundTrip) {
    const auto corpus = generate_synthetic_corpus(30, 8);
    const auto inst = labeled_instances(corpus, LabelSet{});
    const auto svm = SvmClassifier::train(inst, LabelSet{}, KeywordLexicon::default_lexicon());
    std::stringstream buf;
    svm.save(buf);
    const auto back = SvmClassifier::load(buf);
    EXPECT_EQ(back.lexicon(), svm.lexicon());
    for (const auto& i : inst) EXPECT_EQ(back.decision_scores(i), svm.decision_scores(i));
    std::stringstream again;
    back.save(again);
    EXPECT_EQ(again.str(), [&] { std::stringstream s; svm.save(s); return s.str(); }());
}

TEST(Svm, LoadRejectsWrongMagic) {
    std::istringstream in("chemprot-cnn v1\n");
    EXPECT_THROW(SvmClassifier::load(in), Error);
}
