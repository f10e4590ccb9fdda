#pragma once

// Line-oriented text serialization shared by the model file formats. Every
// file starts with "<magic> v<version>"; numbers are written with %.17g so
// that a save/load round trip is exact and output is byte-stable.

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "chemprot/error.hpp"

namespace chemprot::io {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case ' ': out += "\\s"; break;
            default: out += c;
        }
    }
    return out.empty() ? std::string("\\0") : out;
}

inline std::string unescape(const std::string& s) {
    if (s == "\\0") return {};
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 == s.size()) {
            out += s[i];
            continue;
        }
        switch (s[++i]) {
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case 's': out += ' '; break;
            default: out += s[i];
        }
    }
    return out;
}

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void header(const std::string& magic, int version) { out_ << magic << " v" << version << '\n'; }

    /// "key v1 v2 ..." on one line.
    template <class... Ts>
    void line(const std::string& key, const Ts&... values) {
        out_ << key;
        ((out_ << ' ' << field(values)), ...);
        out_ << '\n';
    }

    void doubles(const std::string& key, const double* data, std::size_t n) {
        out_ << key << ' ' << n;
        for (std::size_t i = 0; i < n; ++i) out_ << ' ' << format_double(data[i]);
        out_ << '\n';
    }

    void strings(const std::string& key, const std::vector<std::string>& items) {
        out_ << key << ' ' << items.size();
        for (const auto& s : items) out_ << ' ' << escape(s);
        out_ << '\n';
    }

private:
    static std::string field(const std::string& s) { return escape(s); }
    static std::string field(const char* s) { return escape(s); }
    static std::string field(double v) { return format_double(v); }
    static std::string field(bool v) { return v ? "1" : "0"; }
    template <class T>
    static std::string field(const T& v) {
        return std::to_string(v);
    }

    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    void header(const std::string& magic, int version) {
        std::string m, v;
        if (!(in_ >> m >> v) || m != magic) fail("expected " + magic + " header");
        if (v != "v" + std::to_string(version)) fail("unsupported version " + v);
    }

    void expect(const std::string& key) {
        std::string k;
        if (!(in_ >> k) || k != key) fail("expected '" + key + "', found '" + k + "'");
    }

    template <class T>
    T value() {
        if constexpr (std::is_same_v<T, std::string>) {
            std::string s;
            if (!(in_ >> s)) fail("unexpected end of file");
            return unescape(s);
        } else if constexpr (std::is_same_v<T, double>) {
            std::string s;
            if (!(in_ >> s)) fail("unexpected end of file");
            try {
                return std::stod(s);
            } catch (const std::exception&) {
                fail("bad number '" + s + "'");
            }
        } else {
            T v{};
            if (!(in_ >> v)) fail("bad or missing value");
            return v;
        }
    }

    template <class T>
    T keyed(const std::string& key) {
        expect(key);
        return value<T>();
    }

    std::vector<double> doubles(const std::string& key) {
        expect(key);
        const auto n = value<std::size_t>();
        std::vector<double> out(n);
        for (auto& d : out) d = value<double>();
        return out;
    }

    std::vector<std::string> strings(const std::string& key) {
        expect(key);
        const auto n = value<std::size_t>();
        std::vector<std::string> out(n);
        for (auto& s : out) s = value<std::string>();
        return out;
    }

    [[noreturn]] void fail(const std::string& message) const {
        throw Error("model", source_ + ": " + message);
    }

private:
    std::istream& in_;
    std::string source_;
};

}  // namespace chemprot::io
