#pragma once

// Template-based corpus generator for desk-scale runs. Each sentence has one
// core clause relating a chemical and a gene through a trigger word, and may
// carry a conjoined distractor clause with one more mention. The gold label
// of a pair is the class of the trigger lying strictly between the two
// mentions, or NEG when there is none.

#include <algorithm>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "chemprot/corpus.hpp"
#include "chemprot/random.hpp"

namespace chemprot {

struct TriggerForm {
    std::string_view label;    ///< "NEG" for neutral verbs
    std::string_view lemma;
    std::string_view active;   ///< 3rd-person verb form, or the noun for nominal triggers
    std::string_view passive;  ///< past participle; empty for nominal triggers
    std::string_view preposition;  ///< nominal triggers only
};

inline const std::vector<TriggerForm>& synthetic_triggers() {
    static const std::vector<TriggerForm> t{
        {"CPR:3", "activate", "activates", "activated", ""},
        {"CPR:3", "increase", "increases", "increased", ""},
        {"CPR:3", "upregulate", "upregulates", "upregulated", ""},
        {"CPR:4", "inhibit", "inhibits", "inhibited", ""},
        {"CPR:4", "block", "blocks", "blocked", ""},
        {"CPR:4", "suppress", "suppresses", "suppressed", ""},
        {"CPR:5", "agonism", "agonism", "", "at"},
        {"CPR:5", "agonize", "agonizes", "agonized", ""},
        {"CPR:6", "antagonize", "antagonizes", "antagonized", ""},
        {"CPR:6", "antagonism", "antagonism", "", "at"},
        {"CPR:9", "metabolize", "metabolizes", "metabolized", ""},
        {"CPR:9", "substrate", "substrate", "", "of"},
    };
    return t;
}

/// Neutral verbs (participle, lemma) used in NEG core clauses and distractors.
inline const std::vector<std::pair<std::string_view, std::string_view>>& synthetic_neutral_verbs() {
    static const std::vector<std::pair<std::string_view, std::string_view>> v{
        {"measured", "measure"}, {"detected", "detect"}, {"compared", "compare"},
        {"examined", "examine"}, {"observed", "observe"}};
    return v;
}

namespace detail {

struct SynthBuilder {
    Sentence sentence;
    std::vector<EntityMention> mentions;

    int add(std::string_view surface, std::string_view lemma, std::string_view pos, std::string_view chunk,
            std::string_view ne = "O") {
        Token t;
        t.surface = surface;
        t.lemma = lemma;
        t.pos = pos;
        t.chunk = chunk;
        t.ne = ne;
        sentence.tokens.push_back(std::move(t));
        return sentence.size() - 1;
    }

    void attach(int dependent, int head, std::string_view label) {
        auto& t = sentence.tokens[static_cast<std::size_t>(dependent)];
        t.head = head;
        t.dep_label = label;
    }

    /// Adds a (possibly multi-word) mention; returns its head token, to which
    /// the other words attach as compounds.
    int mention(const std::vector<std::string>& words, EntityKind kind, const std::string& id, int sentence_index) {
        const int first = sentence.size();
        const bool gene = kind == EntityKind::Gene;
        for (std::size_t i = 0; i < words.size(); ++i) {
            add(words[i], lowercase(words[i]), "NN", i == 0 ? "B-NP" : "I-NP",
                gene ? (i == 0 ? "B-protein" : "I-protein") : "O");
        }
        const int last = sentence.size() - 1;
        for (int i = first; i < last; ++i) attach(i, last, "compound");
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        mentions.push_back({id, kind, sentence_index, {first, last}, text});
        return last;
    }
};

inline std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = s.find(' ', i);
        if (j == std::string_view::npos) j = s.size();
        out.emplace_back(s.substr(i, j - i));
        i = j + 1;
    }
    return out;
}

inline const std::vector<std::string_view>& chemical_names() {
    static const std::vector<std::string_view> n{
        "gemfibrozil", "aspirin",       "valproic acid", "tamoxifen",  "rapamycin",    "metformin",
        "imatinib",    "quercetin",     "caffeine",      "dexamethasone", "cisplatin", "resveratrol",
        "ouabain",     "forskolin",     "genistein",     "retinoic acid", "nicotine",  "clozapine",
        "haloperidol", "fluoxetine",    "ketamine",      "curcumin",   "capsaicin",    "atropine",
        "lovastatin",  "verapamil",     "ibuprofen",     "melatonin",  "estradiol",    "cocaine"};
    return n;
}

inline const std::vector<std::string_view>& gene_names() {
    static const std::vector<std::string_view> n{
        "COX-2",       "nitric-oxide synthase", "CYP3A4",   "PPAR alpha", "mTOR",         "AMPK",
        "BCR-ABL",     "EGFR",                  "ERK1",     "MAOB",       "Na,K-ATPase",  "HDAC1",
        "CYP2D6",      "adenylyl cyclase",      "TRPV1",    "D2 receptor", "5-HT2A",      "GABA-A receptor",
        "NMDA receptor", "estrogen receptor",   "p53",      "JNK",        "PKC",          "caspase-3",
        "VEGF",        "TNF alpha",             "STAT3",    "SERT",       "AChE",         "CYP1A2"};
    return n;
}

class SynthDocument {
public:
    SynthDocument(std::string id, Rng& rng) : rng_(rng) { doc_.id = std::move(id); }

    void add_sentence() {
        const int s = static_cast<int>(doc_.sentences.size());
        SynthBuilder b;
        if (rng_.uniform() < 0.2) {
            const std::string_view word = pick({"Notably", "Moreover", "Here", "Furthermore"});
            const int adv = b.add(word, detail::lowercase(std::string(word)), "RB", "B-ADVP");
            b.add(",", ",", ",", "O");
            pending_.push_back({adv, "advmod"});
            pending_.push_back({adv + 1, "punct"});
        }

        const bool chem_first = rng_.uniform() < 0.6;
        const double d = rng_.uniform();
        const int distractor = d < 0.25 ? 1 : (d < 0.4 ? 2 : 0);  // 1: extra gene, 2: extra chemical
        // Distractors sit on the far side of the core mention of the other
        // kind, so no trigger lies between a distractor and that mention.
        const bool distractor_before = (distractor == 1) == chem_first;

        int root;
        if (distractor != 0 && distractor_before) {
            const int droot = distractor_clause(b, s, distractor == 1 ? EntityKind::Gene : EntityKind::Chemical);
            const int cc = b.add("and", "and", "CC", "O");
            root = core_clause(b, s, chem_first);
            b.attach(cc, root, "cc");
            b.attach(root, droot, "conj");
            root = droot;
        } else {
            root = core_clause(b, s, chem_first);
            if (distractor != 0) {
                const int cc = b.add("and", "and", "CC", "O");
                const int droot =
                    distractor_clause(b, s, distractor == 1 ? EntityKind::Gene : EntityKind::Chemical);
                b.attach(cc, droot, "cc");
                b.attach(droot, root, "conj");
            }
        }
        const int dot = b.add(".", ".", ".", "O");
        b.attach(dot, root, "punct");
        for (const auto& [tok, label] : pending_) b.attach(tok, root, label);
        pending_.clear();
        b.sentence.tokens[static_cast<std::size_t>(root)].head = kRoot;
        b.sentence.tokens[static_cast<std::size_t>(root)].dep_label = "root";

        label_pairs(b);
        for (auto& m : b.mentions) doc_.mentions.push_back(std::move(m));
        doc_.sentences.push_back(std::move(b.sentence));
    }

    Document finish() {
        int offset = 0;
        for (auto& sentence : doc_.sentences) {
            for (auto& t : sentence.tokens) {
                t.char_start = offset;
                t.char_end = offset + static_cast<int>(t.surface.size());
                offset = t.char_end + 1;
            }
        }
        return std::move(doc_);
    }

private:
    std::string_view pick(std::initializer_list<std::string_view> options) {
        return *(options.begin() + static_cast<std::ptrdiff_t>(rng_.below(options.size())));
    }

    template <class V>
    const typename V::value_type& pick_from(const V& v) {
        return v[rng_.below(v.size())];
    }

    std::string next_id() { return "T" + std::to_string(++mention_counter_); }

    int add_mention(SynthBuilder& b, int s, EntityKind kind) {
        const auto& pool = kind == EntityKind::Chemical ? chemical_names() : gene_names();
        std::string_view name = pick_from(pool);
        return b.mention(split_words(name), kind, next_id(), s);
    }

    /// "X was measured" style clause; returns its verb.
    int distractor_clause(SynthBuilder& b, int s, EntityKind kind) {
        const int m = add_mention(b, s, kind);
        const int aux = b.add("was", "be", "VBD", "B-VP");
        const auto& [verb, lemma] = pick_from(synthetic_neutral_verbs());
        const int v = b.add(verb, lemma, "VBN", "I-VP");
        b.attach(m, v, "nsubjpass");
        b.attach(aux, v, "auxpass");
        return v;
    }

    /// The chemical/gene clause; returns its root.
    int core_clause(SynthBuilder& b, int s, bool chem_first) {
        const auto& triggers = synthetic_triggers();
        const bool negative = rng_.uniform() < 0.2;
        const EntityKind first_kind = chem_first ? EntityKind::Chemical : EntityKind::Gene;
        const EntityKind second_kind = chem_first ? EntityKind::Gene : EntityKind::Chemical;

        if (negative) {
            // X was <neutral> with Y
            const int x = add_mention(b, s, first_kind);
            const int aux = b.add("was", "be", "VBD", "B-VP");
            const auto& [verb, lemma] = pick_from(synthetic_neutral_verbs());
            const int v = b.add(verb, lemma, "VBN", "I-VP");
            const int with = b.add("with", "with", "IN", "B-PP");
            const int y = add_mention(b, s, second_kind);
            b.attach(x, v, "nsubjpass");
            b.attach(aux, v, "auxpass");
            b.attach(with, y, "case");
            b.attach(y, v, "nmod:with");
            return v;
        }

        const TriggerForm* t = &pick_from(triggers);
        if (!chem_first) {
            // Gene-first sentences use the passive, which nominal triggers lack.
            while (t->passive.empty()) t = &pick_from(triggers);
            const int g = add_mention(b, s, EntityKind::Gene);
            const int aux = b.add("is", "be", "VBZ", "B-VP");
            const int v = b.add(t->passive, t->lemma, "VBN", "I-VP");
            const int by = b.add("by", "by", "IN", "B-PP");
            const int c = add_mention(b, s, EntityKind::Chemical);
            b.attach(g, v, "nsubjpass");
            b.attach(aux, v, "auxpass");
            b.attach(by, c, "case");
            b.attach(c, v, "nmod:agent");
            return v;
        }

        const int c = add_mention(b, s, EntityKind::Chemical);
        if (!t->preposition.empty()) {
            // CHEM shows [strong] NOUN PREP GENE
            const int shows = b.add("shows", "show", "VBZ", "B-VP");
            int adj = -1;
            if (rng_.uniform() < 0.4) {
                const std::string_view word = pick({"strong", "partial", "potent"});
                adj = b.add(word, word, "JJ", "B-NP");
            }
            const int noun = b.add(t->active, t->lemma, "NN", adj >= 0 ? "I-NP" : "B-NP");
            const int prep = b.add(t->preposition, t->preposition, "IN", "B-PP");
            const int g = add_mention(b, s, EntityKind::Gene);
            b.attach(c, shows, "nsubj");
            if (adj >= 0) b.attach(adj, noun, "amod");
            b.attach(noun, shows, "dobj");
            b.attach(prep, g, "case");
            b.attach(g, noun, "nmod:" + std::string(t->preposition));
            return shows;
        }

        // CHEM [adv] VERB [the NOUN of] GENE
        int adv = -1;
        if (rng_.uniform() < 0.3) {
            const std::string_view word = pick({"strongly", "selectively", "potently"});
            adv = b.add(word, word, "RB", "B-ADVP");
        }
        const int v = b.add(t->active, t->lemma, "VBZ", "B-VP");
        b.attach(c, v, "nsubj");
        if (adv >= 0) b.attach(adv, v, "advmod");
        if (rng_.uniform() < 0.4) {
            const int det = b.add("the", "the", "DT", "B-NP");
            const std::string_view noun_surface = pick({"activity", "expression", "induction"});
            const int noun = b.add(noun_surface, noun_surface, "NN", "I-NP");
            const int of = b.add("of", "of", "IN", "B-PP");
            const int g = add_mention(b, s, EntityKind::Gene);
            b.attach(det, noun, "det");
            b.attach(noun, v, "dobj");
            b.attach(of, g, "case");
            b.attach(g, noun, "nmod:of");
        } else {
            const int g = add_mention(b, s, EntityKind::Gene);
            b.attach(g, v, "dobj");
        }
        return v;
    }

    /// Applies the labeling rule to every chemical/gene pair of the sentence.
    void label_pairs(const SynthBuilder& b) {
        for (const auto& c : b.mentions) {
            if (c.kind != EntityKind::Chemical) continue;
            for (const auto& g : b.mentions) {
                if (g.kind != EntityKind::Gene) continue;
                const int lo = std::min(c.span.last, g.span.last) + 1;
                const int hi = std::max(c.span.first, g.span.first);
                for (int i = lo; i < hi; ++i) {
                    const auto& lemma = b.sentence.tokens[static_cast<std::size_t>(i)].lemma;
                    for (const auto& t : synthetic_triggers()) {
                        if (t.lemma == lemma) {
                            doc_.relations.push_back({std::string(t.label), c.id, g.id});
                            i = hi;
                            break;
                        }
                    }
                }
            }
        }
    }

    Rng& rng_;
    Document doc_;
    int mention_counter_ = 0;
    std::vector<std::pair<int, std::string>> pending_;
};

}  // namespace detail

/// Deterministic in (size, seed). Documents hold 1-3 sentences.
inline AnnotatedCorpus generate_synthetic_corpus(std::size_t size, std::uint64_t seed) {
    AnnotatedCorpus corpus;
    corpus.documents.reserve(size);
    Rng rng(derive_seed(seed, 0x5e));
    for (std::size_t d = 0; d < size; ++d) {
        char id[32];
        std::snprintf(id, sizeof id, "SYN%06zu", d + 1);
        detail::SynthDocument doc(id, rng);
        const int sentences = 1 + static_cast<int>(rng.below(3));
        for (int s = 0; s < sentences; ++s) doc.add_sentence();
        corpus.documents.push_back(doc.finish());
        detail::validate_document(corpus.documents.back());
    }
    return corpus;
}

}  // namespace chemprot
