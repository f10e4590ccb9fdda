#pragma once

// Micro-averaged precision / recall / F1.

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "chemprot/corpus.hpp"
#include "chemprot/labels.hpp"

namespace chemprot {

struct Scores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

inline Scores scores_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    Scores s;
    s.tp = tp;
    s.fp = fp;
    s.fn = fn;
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

/// Exact tuple matching with set semantics; NEG rows are ignored.
inline Scores evaluate(std::span<const RelationTuple> predictions, std::span<const RelationTuple> gold) {
    std::set<RelationTuple> pred;
    std::set<RelationTuple> ref;
    for (const auto& p : predictions) {
        if (p.label != "NEG") pred.insert(p);
    }
    for (const auto& g : gold) {
        if (g.label != "NEG") ref.insert(g);
    }
    std::size_t tp = 0;
    for (const auto& p : pred) tp += ref.count(p);
    return scores_from_counts(tp, pred.size() - tp, ref.size() - tp);
}

/// Micro-F1 over positive classes at the instance level, used for epoch
/// selection on a dev split.
inline Scores instance_scores(std::span<const Label> predicted, std::span<const Label> gold) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool match = predicted[i] == gold[i];
        if (!predicted[i].is_negative()) (match ? tp : fp) += 1;
        if (!gold[i].is_negative() && !match) ++fn;
    }
    return scores_from_counts(tp, fp, fn);
}

}  // namespace chemprot
