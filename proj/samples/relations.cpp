// Walks through the library on a small generated corpus: dependency paths of
// a few candidates, then an SVM trained on most documents and scored on the
// rest.

#include <iostream>

#include "chemprot/chemprot.hpp"

using namespace chemprot;

int main() {
    const AnnotatedCorpus corpus = generate_synthetic_corpus(60, 7);
    const LabelSet labels;

    const auto [train_docs, test_docs] = hold_out(corpus, 0.25, 7);
    const auto train = labeled_instances(train_docs, labels);
    const auto test = labeled_instances(test_docs, labels);

    for (std::size_t i = 0; i < 3 && i < test.size(); ++i) {
        const RelationInstance& inst = test[i];
        const DepPath path = instance_path(inst);
        const Sentence& s = inst.sentence();
        const auto words = path_words(path, s, WordForm::Surface,
                                      {{mention_head(s, inst.chem().span), inst.chem().text},
                                       {mention_head(s, inst.gene().span), inst.gene().text}});
        std::cout << inst.doc_id() << " " << inst.chem().text << " / " << inst.gene().text << " ["
                  << labels.name(inst.label()) << "]\n  " << render_path(path, words) << '\n';
        for (const auto& w : v_walks(path, words)) std::cout << "  v-walk: " << to_string(w) << '\n';
    }

    const SvmClassifier svm = SvmClassifier::train(train, labels, KeywordLexicon::default_lexicon());
    std::vector<Label> predicted, gold;
    for (const auto& inst : test) {
        predicted.push_back(svm.predict(inst));
        gold.push_back(inst.label());
    }
    const Scores s = instance_scores(predicted, gold);
    std::cout << "svm on " << test.size() << " held-out instances: P=" << format_metric(s.precision)
              << " R=" << format_metric(s.recall) << " F=" << format_metric(s.f1) << '\n';
}
