#pragma once

#include <stdexcept>
#include <string>

namespace chemprot {

/// Base class for every error raised by the library. The category string is
/// what the command-line tool prints before the message.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error("parse", "line " + std::to_string(line) + ": " + message), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message) : Error("validation", message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

}  // namespace chemprot
