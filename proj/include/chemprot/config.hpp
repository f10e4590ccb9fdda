#pragma once

// Run configuration: two built-in profiles (desk, paper) plus an optional
// TOML-style override file with [corpus] [svm] [cnn] [rnn] [ensemble]
// [pipeline] sections. Supported values: integers, floats, booleans, quoted
// strings and flat arrays of those.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "chemprot/cnn.hpp"
#include "chemprot/ensemble.hpp"
#include "chemprot/error.hpp"
#include "chemprot/labels.hpp"
#include "chemprot/rnn.hpp"
#include "chemprot/svm.hpp"

namespace chemprot {

struct PipelineSettings {
    double test_fraction = 0.2;  ///< held-out test slice when run-all gets no test corpus
    double dev_fraction = 0.1;   ///< slice of basetrain used for epoch selection
    std::size_t synthetic_documents = 300;
    std::string run_id = "run";
    std::vector<int> folds{0, 1, 2, 3, 4};
};

struct Config {
    std::string profile = "desk";
    std::vector<std::string> positive_labels = LabelSet::default_positives();
    std::string lexicon;  ///< keyword file; empty -> built-in lexicon
    SvmParams svm;
    CnnConfig cnn;
    RnnConfig rnn;
    ForestParams forest;
    bool vote_unanimous = false;
    PipelineSettings pipeline;

    LabelSet labels() const { return LabelSet(positive_labels); }

    KeywordLexicon keyword_lexicon() const {
        return lexicon.empty() ? KeywordLexicon::default_lexicon() : KeywordLexicon::load(lexicon);
    }

    void validate() const {
        if (svm.c <= 0 || svm.tol <= 0 || svm.max_epochs < 1) throw ConfigError("svm: c, tol and max_epochs must be positive");
        cnn.validate();
        rnn.validate();
        if (forest.trees < 1) throw ConfigError("ensemble: trees must be >= 1");
        if (!(pipeline.test_fraction >= 0.0 && pipeline.test_fraction < 1.0)) {
            throw ConfigError("pipeline: test_fraction must be in [0, 1)");
        }
        if (!(pipeline.dev_fraction >= 0.0 && pipeline.dev_fraction < 1.0)) {
            throw ConfigError("pipeline: dev_fraction must be in [0, 1)");
        }
        for (int f : pipeline.folds) {
            if (f < 0 || f > 4) throw ConfigError("pipeline: fold indices must be in 0..4");
        }
        (void)labels();
    }
};

/// Full-size settings.
inline Config paper_profile() {
    Config c;
    c.profile = "paper";
    c.forest.trees = 50000;
    return c;
}

/// Reduced sizes for laptop-scale end-to-end runs.
inline Config desk_profile() {
    Config c;
    c.profile = "desk";
    c.cnn.word_dim = 50;
    c.cnn.pos_dim = c.cnn.chunk_dim = c.cnn.ne_dim = c.cnn.dep_dim = c.cnn.position_dim = 16;
    c.cnn.filters = 16;
    c.cnn.epochs = 15;
    c.cnn.patience = 4;
    c.rnn.word_dim = 50;
    c.rnn.pos_dim = c.rnn.chunk_dim = c.rnn.position_dim = 16;
    c.rnn.hidden = 64;
    c.rnn.epochs = 15;
    c.rnn.patience = 4;
    c.forest.trees = 500;
    return c;
}

inline Config profile_config(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

// ---------------------------------------------------------------------------
// TOML subset

using ConfigScalar = std::variant<bool, std::int64_t, double, std::string>;
using ConfigValue = std::variant<ConfigScalar, std::vector<ConfigScalar>>;
using ConfigTable = std::map<std::string, ConfigValue>;  ///< keys are "section.key"

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Drops a '#' comment that is not inside a quoted string.
inline std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

inline ConfigScalar parse_scalar(const std::string& text, std::size_t line) {
    const std::string s = trim(text);
    if (s.empty()) throw ParseError(line, "missing value");
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') throw ParseError(line, "unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                const char n = s[++i];
                out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
            } else {
                out += s[i];
            }
        }
        return out;
    }
    if (s == "true") return true;
    if (s == "false") return false;
    std::string digits;
    for (char c : s) {
        if (c != '_') digits += c;
    }
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    try {
        std::size_t used = 0;
        if (is_float) {
            const double v = std::stod(digits, &used);
            if (used == digits.size()) return v;
        } else {
            const long long v = std::stoll(digits, &used);
            if (used == digits.size()) return static_cast<std::int64_t>(v);
        }
    } catch (const std::exception&) {
    }
    throw ParseError(line, "cannot parse value '" + s + "'");
}

}  // namespace detail

inline ConfigTable parse_config_table(std::istream& in) {
    ConfigTable table;
    std::string section;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string s = detail::trim(detail::strip_comment(raw));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ParseError(line, "malformed section header");
            section = detail::trim(s.substr(1, s.size() - 2));
            if (section.empty()) throw ParseError(line, "empty section name");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ParseError(line, "expected key = value");
        const std::string key = detail::trim(s.substr(0, eq));
        if (key.empty()) throw ParseError(line, "empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (table.count(full) != 0) throw ParseError(line, "duplicate key '" + full + "'");
        const std::string value = detail::trim(s.substr(eq + 1));
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']') throw ParseError(line, "arrays must close on the same line");
            std::vector<ConfigScalar> items;
            const std::string body = detail::trim(value.substr(1, value.size() - 2));
            if (!body.empty()) {
                std::stringstream ss(body);
                std::string item;
                while (std::getline(ss, item, ',')) items.push_back(detail::parse_scalar(item, line));
            }
            table[full] = std::move(items);
        } else {
            table[full] = detail::parse_scalar(value, line);
        }
    }
    return table;
}

namespace detail {

template <class T>
T config_as(const ConfigScalar& v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
        if (auto* b = std::get_if<bool>(&v)) return *b;
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (auto* s = std::get_if<std::string>(&v)) return *s;
    } else if constexpr (std::is_floating_point_v<T>) {
        if (auto* d = std::get_if<double>(&v)) return *d;
        if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    } else {
        if (auto* i = std::get_if<std::int64_t>(&v)) {
            if (*i < 0 && std::is_unsigned_v<T>) throw ConfigError(key + ": must be non-negative");
            return static_cast<T>(*i);
        }
    }
    throw ConfigError(key + ": wrong value type");
}

class ConfigBinder {
public:
    explicit ConfigBinder(Config& c) {
        bind("corpus.labels", c.positive_labels);
        bind("corpus.lexicon", c.lexicon);

        bind("svm.c", c.svm.c);
        bind("svm.tol", c.svm.tol);
        bind("svm.balanced", c.svm.balanced);
        bind("svm.max_epochs", c.svm.max_epochs);

        bind("cnn.word_dim", c.cnn.word_dim);
        bind("cnn.pos_dim", c.cnn.pos_dim);
        bind("cnn.chunk_dim", c.cnn.chunk_dim);
        bind("cnn.ne_dim", c.cnn.ne_dim);
        bind("cnn.dep_dim", c.cnn.dep_dim);
        bind("cnn.position_dim", c.cnn.position_dim);
        bind("cnn.filters", c.cnn.filters);
        bind("cnn.windows", c.cnn.windows);
        bind("cnn.dropout", c.cnn.dropout);
        bind("cnn.batch_size", c.cnn.batch_size);
        bind("cnn.epochs", c.cnn.epochs);
        bind("cnn.patience", c.cnn.patience);
        bind("cnn.position_clip", c.cnn.position_clip);
        bind("cnn.train_word_embeddings", c.cnn.train_word_embeddings);
        bind("cnn.learning_rate", c.cnn.adam.lr);
        bind("cnn.word_vectors", c.cnn.word_vectors);

        bind("rnn.word_dim", c.rnn.word_dim);
        bind("rnn.pos_dim", c.rnn.pos_dim);
        bind("rnn.chunk_dim", c.rnn.chunk_dim);
        bind("rnn.position_dim", c.rnn.position_dim);
        bind("rnn.hidden", c.rnn.hidden);
        bind("rnn.recurrent_dropout", c.rnn.recurrent_dropout);
        bind("rnn.output_dropout", c.rnn.output_dropout);
        bind("rnn.batch_size", c.rnn.batch_size);
        bind("rnn.min_word_freq", c.rnn.min_word_freq);
        bind("rnn.epochs", c.rnn.epochs);
        bind("rnn.patience", c.rnn.patience);
        bind("rnn.position_clip", c.rnn.position_clip);
        bind("rnn.clip_norm", c.rnn.clip_norm);
        bind("rnn.train_word_embeddings", c.rnn.train_word_embeddings);
        bind("rnn.learning_rate", c.rnn.adam.lr);
        bind("rnn.gamma", c.rnn.ranking.gamma);
        bind("rnn.margin_positive", c.rnn.ranking.margin_positive);
        bind("rnn.margin_negative", c.rnn.ranking.margin_negative);
        bind("rnn.word_vectors", c.rnn.word_vectors);

        bind("ensemble.trees", c.forest.trees);
        bind("ensemble.features_per_split", c.forest.features_per_split);
        bind("ensemble.vote.unanimous", c.vote_unanimous);
        bind("ensemble.vote_unanimous", c.vote_unanimous);

        bind("pipeline.test_fraction", c.pipeline.test_fraction);
        bind("pipeline.dev_fraction", c.pipeline.dev_fraction);
        bind("pipeline.synthetic_documents", c.pipeline.synthetic_documents);
        bind("pipeline.run_id", c.pipeline.run_id);
        bind("pipeline.folds", c.pipeline.folds);
    }

    void apply(const ConfigTable& table) const {
        for (const auto& [key, value] : table) {
            auto it = setters_.find(key);
            if (it == setters_.end()) throw ConfigError("unknown config key '" + key + "'");
            it->second(value);
        }
    }

private:
    template <class T>
    void bind(const std::string& key, T& field) {
        setters_[key] = [&field, key](const ConfigValue& v) {
            const auto* s = std::get_if<ConfigScalar>(&v);
            if (s == nullptr) throw ConfigError(key + ": expected a single value, got an array");
            field = config_as<T>(*s, key);
        };
    }

    template <class T>
    void bind(const std::string& key, std::vector<T>& field) {
        setters_[key] = [&field, key](const ConfigValue& v) {
            const auto* a = std::get_if<std::vector<ConfigScalar>>(&v);
            if (a == nullptr) throw ConfigError(key + ": expected an array");
            field.clear();
            for (const auto& item : *a) field.push_back(config_as<T>(item, key));
        };
    }

    std::map<std::string, std::function<void(const ConfigValue&)>> setters_;
};

}  // namespace detail

/// Applies overrides on top of `base`, then validates. "[ensemble.vote]
/// unanimous = true" and "[ensemble] vote.unanimous = true" are equivalent.
inline Config apply_config(Config base, std::istream& in) {
    const ConfigTable table = parse_config_table(in);
    detail::ConfigBinder(base).apply(table);
    base.validate();
    return base;
}

inline Config load_config(const std::string& profile, const std::filesystem::path& path) {
    Config base = profile_config(profile);
    if (path.empty()) {
        base.validate();
        return base;
    }
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    try {
        return apply_config(std::move(base), in);
    } catch (const ParseError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace chemprot
