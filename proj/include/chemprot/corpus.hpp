#pragma once

// Annotated corpus data model, JSON Lines ingestion, candidate generation and
// the tab-separated relation file format used for predictions and gold.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "chemprot/error.hpp"
#include "chemprot/labels.hpp"

namespace chemprot {

inline constexpr int kRoot = -1;

struct Token {
    std::string surface;
    std::string lemma;
    std::string pos;
    std::string chunk;
    std::string ne;
    int head = kRoot;  ///< sentence-local index of the governor, or kRoot
    std::string dep_label;
    int char_start = 0;
    int char_end = 0;
};

struct Sentence {
    std::vector<Token> tokens;

    int size() const { return static_cast<int>(tokens.size()); }
};

enum class EntityKind { Chemical, Gene };

inline const char* to_string(EntityKind k) { return k == EntityKind::Chemical ? "CHEMICAL" : "GENE"; }

/// Inclusive token range.
struct Span {
    int first = 0;
    int last = 0;

    int length() const { return last - first + 1; }
    bool contains(int i) const { return i >= first && i <= last; }
    bool overlaps(const Span& o) const { return first <= o.last && o.first <= last; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct EntityMention {
    std::string id;
    EntityKind kind = EntityKind::Chemical;
    int sentence = 0;
    Span span;
    std::string text;
};

struct GoldRelation {
    std::string label;
    std::string chem_id;
    std::string gene_id;
};

struct Document {
    std::string id;
    std::vector<Sentence> sentences;
    std::vector<EntityMention> mentions;
    std::vector<GoldRelation> relations;

    const EntityMention* find_mention(const std::string& mention_id) const {
        for (const auto& m : mentions) {
            if (m.id == mention_id) return &m;
        }
        return nullptr;
    }
};

/// Immutable after parsing; share by const reference.
struct AnnotatedCorpus {
    std::vector<Document> documents;

    std::size_t sentence_count() const {
        std::size_t n = 0;
        for (const auto& d : documents) n += d.sentences.size();
        return n;
    }
};

/// One intra-sentence (chemical, gene) candidate. The sentence pointer refers
/// into the corpus the instance was generated from, which must outlive it.
class RelationInstance {
public:
    RelationInstance(std::string doc_id, int sentence_index, const Sentence* sentence,
                     EntityMention chem, EntityMention gene, Label label = kNegative)
        : doc_id_(std::move(doc_id)),
          sentence_index_(sentence_index),
          sentence_(sentence),
          chem_(std::move(chem)),
          gene_(std::move(gene)),
          label_(label) {
        if (chem_.kind != EntityKind::Chemical || gene_.kind != EntityKind::Gene) {
            throw ValidationError("relation instance needs a CHEMICAL and a GENE mention");
        }
        if (chem_.sentence != sentence_index_ || gene_.sentence != sentence_index_) {
            throw ValidationError("relation instance mentions must share sentence " +
                                  std::to_string(sentence_index_));
        }
        if (sentence_ == nullptr) throw ValidationError("relation instance without sentence");
    }

    const std::string& doc_id() const { return doc_id_; }
    int sentence_index() const { return sentence_index_; }
    const Sentence& sentence() const { return *sentence_; }
    const EntityMention& chem() const { return chem_; }
    const EntityMention& gene() const { return gene_; }
    Label label() const { return label_; }
    void set_label(Label l) { label_ = l; }

private:
    std::string doc_id_;
    int sentence_index_;
    const Sentence* sentence_;
    EntityMention chem_;
    EntityMention gene_;
    Label label_;
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline EntityKind parse_kind(const std::string& kind, std::size_t line) {
    if (kind == "CHEMICAL") return EntityKind::Chemical;
    // GENE-Y and GENE-N fold into one kind.
    if (kind == "GENE" || kind == "GENE-Y" || kind == "GENE-N") return EntityKind::Gene;
    throw ParseError(line, "unknown mention kind '" + kind + "'");
}

inline void validate_document(const Document& doc) {
    const std::string where = "document " + doc.id;
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
        const auto& sent = doc.sentences[s];
        for (int t = 0; t < sent.size(); ++t) {
            const Token& tok = sent.tokens[static_cast<std::size_t>(t)];
            const std::string tag = where + " sentence " + std::to_string(s) + " token " +
                                    std::to_string(t) + " ('" + tok.surface + "')";
            if (tok.head != kRoot && (tok.head < 0 || tok.head >= sent.size())) {
                throw ValidationError(tag + ": depHead " + std::to_string(tok.head) +
                                      " outside sentence of length " + std::to_string(sent.size()));
            }
            if (tok.head == t) throw ValidationError(tag + ": token is its own head");
            if (tok.char_start >= tok.char_end) {
                throw ValidationError(tag + ": charStart must be < charEnd");
            }
        }
    }
    std::set<std::string> ids;
    for (const auto& m : doc.mentions) {
        if (!ids.insert(m.id).second) {
            throw ValidationError(where + ": duplicate mention id '" + m.id + "'");
        }
        if (m.sentence < 0 || m.sentence >= static_cast<int>(doc.sentences.size())) {
            throw ValidationError(where + ": mention '" + m.id + "' has bad sentenceIndex " +
                                  std::to_string(m.sentence));
        }
        const int n = doc.sentences[static_cast<std::size_t>(m.sentence)].size();
        if (m.span.first < 0 || m.span.first > m.span.last || m.span.last >= n) {
            throw ValidationError(where + ": mention '" + m.id + "' span [" +
                                  std::to_string(m.span.first) + ", " + std::to_string(m.span.last) +
                                  "] outside sentence of length " + std::to_string(n));
        }
    }
    for (const auto& r : doc.relations) {
        const EntityMention* chem = doc.find_mention(r.chem_id);
        const EntityMention* gene = doc.find_mention(r.gene_id);
        if (chem == nullptr || gene == nullptr) {
            throw ValidationError(where + ": relation " + r.label + " references unknown mention");
        }
        if (chem->kind != EntityKind::Chemical || gene->kind != EntityKind::Gene) {
            throw ValidationError(where + ": relation " + r.label + " (" + r.chem_id + ", " +
                                  r.gene_id + ") must be CHEMICAL then GENE");
        }
    }
}

inline Document document_from_json(const nlohmann::json& j, std::size_t line) {
    Document doc;
    try {
        doc.id = j.at("docId").get<std::string>();
        for (const auto& js : j.at("sentences")) {
            Sentence sent;
            for (const auto& jt : js) {
                Token t;
                t.surface = jt.at("surface").get<std::string>();
                t.lemma = jt.value("lemma", std::string());
                if (t.lemma.empty()) t.lemma = lowercase(t.surface);
                t.pos = jt.value("pos", std::string());
                t.chunk = jt.value("chunk", std::string());
                t.ne = jt.value("ne", std::string());
                t.head = jt.at("depHead").get<int>();
                t.dep_label = jt.value("depLabel", std::string());
                t.char_start = jt.at("charStart").get<int>();
                t.char_end = jt.at("charEnd").get<int>();
                sent.tokens.push_back(std::move(t));
            }
            doc.sentences.push_back(std::move(sent));
        }
        for (const auto& jm : j.value("mentions", nlohmann::json::array())) {
            EntityMention m;
            m.id = jm.at("id").get<std::string>();
            m.kind = parse_kind(jm.at("kind").get<std::string>(), line);
            m.sentence = jm.at("sentenceIndex").get<int>();
            m.span.first = jm.at("firstToken").get<int>();
            m.span.last = jm.at("lastToken").get<int>();
            m.text = jm.value("text", std::string());
            doc.mentions.push_back(std::move(m));
        }
        for (const auto& jr : j.value("relations", nlohmann::json::array())) {
            doc.relations.push_back({jr.at("label").get<std::string>(),
                                     jr.at("chemId").get<std::string>(),
                                     jr.at("geneId").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line, e.what());
    }
    return doc;
}

}  // namespace detail

/// Reads one document per line. Blank lines are skipped.
inline AnnotatedCorpus parse_corpus(std::istream& in) {
    AnnotatedCorpus corpus;
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> doc_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
        Document doc = detail::document_from_json(j, line_no);
        try {
            detail::validate_document(doc);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!doc_ids.insert(doc.id).second) {
            throw ValidationError("line " + std::to_string(line_no) + ": duplicate docId " + doc.id);
        }
        corpus.documents.push_back(std::move(doc));
    }
    return corpus;
}

inline AnnotatedCorpus parse_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file " + path.string());
    return parse_corpus(in);
}

inline nlohmann::ordered_json to_json(const Document& doc) {
    nlohmann::ordered_json j;
    j["docId"] = doc.id;
    auto sentences = nlohmann::ordered_json::array();
    for (const auto& s : doc.sentences) {
        auto tokens = nlohmann::ordered_json::array();
        for (const auto& t : s.tokens) {
            nlohmann::ordered_json jt;
            jt["surface"] = t.surface;
            jt["lemma"] = t.lemma;
            jt["pos"] = t.pos;
            jt["chunk"] = t.chunk;
            jt["ne"] = t.ne;
            jt["depHead"] = t.head;
            jt["depLabel"] = t.dep_label;
            jt["charStart"] = t.char_start;
            jt["charEnd"] = t.char_end;
            tokens.push_back(std::move(jt));
        }
        sentences.push_back(std::move(tokens));
    }
    j["sentences"] = std::move(sentences);
    auto mentions = nlohmann::ordered_json::array();
    for (const auto& m : doc.mentions) {
        nlohmann::ordered_json jm;
        jm["id"] = m.id;
        jm["kind"] = to_string(m.kind);
        jm["sentenceIndex"] = m.sentence;
        jm["firstToken"] = m.span.first;
        jm["lastToken"] = m.span.last;
        jm["text"] = m.text;
        mentions.push_back(std::move(jm));
    }
    j["mentions"] = std::move(mentions);
    auto relations = nlohmann::ordered_json::array();
    for (const auto& r : doc.relations) {
        relations.push_back({{"label", r.label}, {"chemId", r.chem_id}, {"geneId", r.gene_id}});
    }
    j["relations"] = std::move(relations);
    return j;
}

inline void write_corpus(const AnnotatedCorpus& corpus, std::ostream& out) {
    for (const auto& doc : corpus.documents) out << to_json(doc).dump() << '\n';
}

inline void write_corpus(const AnnotatedCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write corpus file " + path.string());
    write_corpus(corpus, out);
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Candidates

struct Candidates {
    std::vector<RelationInstance> instances;
    std::size_t overlapping_skipped = 0;  ///< pairs whose spans overlap
};

/// One instance per co-occurring (chemical, gene) pair, ordered by document,
/// sentence, chemical start, gene start. Labels are all NEG.
inline Candidates generate_candidates(const AnnotatedCorpus& corpus) {
    Candidates out;
    for (const auto& doc : corpus.documents) {
        for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
            std::vector<const EntityMention*> chems;
            std::vector<const EntityMention*> genes;
            for (const auto& m : doc.mentions) {
                if (m.sentence != static_cast<int>(s)) continue;
                (m.kind == EntityKind::Chemical ? chems : genes).push_back(&m);
            }
            auto by_start = [](const EntityMention* a, const EntityMention* b) {
                return a->span.first < b->span.first;
            };
            std::stable_sort(chems.begin(), chems.end(), by_start);
            std::stable_sort(genes.begin(), genes.end(), by_start);
            for (const auto* c : chems) {
                for (const auto* g : genes) {
                    if (c->span.overlaps(g->span)) {
                        ++out.overlapping_skipped;
                        continue;
                    }
                    out.instances.emplace_back(doc.id, static_cast<int>(s), &doc.sentences[s], *c, *g);
                }
            }
        }
    }
    return out;
}

struct LabeledInstances {
    std::vector<RelationInstance> instances;
    std::size_t dropped_cross_sentence = 0;
    std::size_t dropped_unknown_label = 0;  ///< gold labels outside the label set
    std::size_t dropped_unmatched = 0;      ///< same-sentence gold pairs with no candidate
};

/// Assigns gold labels to candidates. Unlabeled pairs are NEG; a pair with k
/// distinct gold labels becomes k instances (training use).
inline LabeledInstances attach_gold_labels(const std::vector<RelationInstance>& instances,
                                           const AnnotatedCorpus& corpus, const LabelSet& labels) {
    using PairKey = std::tuple<std::string, std::string, std::string>;
    std::map<PairKey, std::vector<Label>> gold;
    LabeledInstances out;
    for (const auto& doc : corpus.documents) {
        for (const auto& r : doc.relations) {
            const EntityMention* c = doc.find_mention(r.chem_id);
            const EntityMention* g = doc.find_mention(r.gene_id);
            if (c == nullptr || g == nullptr) continue;
            if (c->sentence != g->sentence) {
                ++out.dropped_cross_sentence;
                continue;
            }
            auto l = labels.find(r.label);
            if (!l || l->is_negative()) {
                ++out.dropped_unknown_label;
                continue;
            }
            auto& v = gold[{doc.id, r.chem_id, r.gene_id}];
            if (std::find(v.begin(), v.end(), *l) == v.end()) v.push_back(*l);
        }
    }
    std::size_t matched = 0;
    for (const auto& inst : instances) {
        auto it = gold.find({inst.doc_id(), inst.chem().id, inst.gene().id});
        if (it == gold.end()) {
            RelationInstance copy = inst;
            copy.set_label(kNegative);
            out.instances.push_back(std::move(copy));
            continue;
        }
        ++matched;
        for (Label l : it->second) {
            RelationInstance copy = inst;
            copy.set_label(l);
            out.instances.push_back(std::move(copy));
        }
    }
    out.dropped_unmatched = gold.size() - std::min(gold.size(), matched);
    return out;
}

// ---------------------------------------------------------------------------
// Relation files: docId<TAB>label<TAB>Arg1:chemId<TAB>Arg2:geneId

struct RelationTuple {
    std::string doc_id;
    std::string label;
    std::string chem_id;
    std::string gene_id;

    friend auto operator<=>(const RelationTuple&, const RelationTuple&) = default;
};

/// Gold tuples for every relation whose label is a positive class, including
/// cross-sentence ones.
inline std::vector<RelationTuple> gold_tuples(const AnnotatedCorpus& corpus, const LabelSet& labels) {
    std::vector<RelationTuple> out;
    for (const auto& doc : corpus.documents) {
        for (const auto& r : doc.relations) {
            auto l = labels.find(r.label);
            if (!l || l->is_negative()) continue;
            out.push_back({doc.id, r.label, r.chem_id, r.gene_id});
        }
    }
    return out;
}

/// NEG rows are omitted. Output order follows the input order.
inline void write_predictions(const std::vector<RelationTuple>& rows, std::ostream& out) {
    for (const auto& r : rows) {
        if (r.label == "NEG") continue;
        out << r.doc_id << '\t' << r.label << "\tArg1:" << r.chem_id << "\tArg2:" << r.gene_id << '\n';
    }
}

inline void write_predictions(const std::vector<RelationTuple>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write predictions to " + path.string());
    write_predictions(rows, out);
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<RelationTuple> read_relations(std::istream& in) {
    std::vector<RelationTuple> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (fields.size() != 4 || fields[2].rfind("Arg1:", 0) != 0 || fields[3].rfind("Arg2:", 0) != 0) {
            throw ParseError(line_no, "expected docId<TAB>label<TAB>Arg1:id<TAB>Arg2:id");
        }
        rows.push_back({fields[0], fields[1], fields[2].substr(5), fields[3].substr(5)});
    }
    return rows;
}

inline std::vector<RelationTuple> read_relations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open relation file " + path.string());
    return read_relations(in);
}

}  // namespace chemprot
