#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chemprot/error.hpp"

namespace chemprot {

/// Class index into a LabelSet. Index 0 is always the negative class.
struct Label {
    int id = 0;

    constexpr bool is_negative() const { return id == 0; }
    friend constexpr auto operator<=>(Label, Label) = default;
};

inline constexpr Label kNegative{0};

/// Ordered label inventory: NEG followed by the configured positive classes.
/// The order fixes the layout of every per-class score vector.
class LabelSet {
public:
    LabelSet() : LabelSet(default_positives()) {}

    explicit LabelSet(std::vector<std::string> positives) {
        if (positives.empty()) throw ConfigError("label set needs at least one positive class");
        names_.reserve(positives.size() + 1);
        names_.emplace_back("NEG");
        for (auto& p : positives) {
            if (p == "NEG") throw ConfigError("NEG cannot be a positive class");
            for (const auto& existing : names_) {
                if (existing == p) throw ConfigError("duplicate label '" + p + "'");
            }
            names_.push_back(std::move(p));
        }
    }

    static std::vector<std::string> default_positives() {
        return {"CPR:3", "CPR:4", "CPR:5", "CPR:6", "CPR:9"};
    }

    int size() const { return static_cast<int>(names_.size()); }
    int positive_count() const { return size() - 1; }

    const std::string& name(Label l) const { return names_.at(static_cast<std::size_t>(l.id)); }
    const std::vector<std::string>& names() const { return names_; }

    std::optional<Label> find(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) return Label{static_cast<int>(i)};
        }
        return std::nullopt;
    }

    Label parse(std::string_view name) const {
        if (auto l = find(name)) return *l;
        throw ValidationError("unknown relation label '" + std::string(name) + "'");
    }

    /// Positive class k (0-based, as in ranking-model score vectors).
    Label positive(int k) const { return Label{k + 1}; }

    friend bool operator==(const LabelSet&, const LabelSet&) = default;

private:
    std::vector<std::string> names_;
};

}  // namespace chemprot
