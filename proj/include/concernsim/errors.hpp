#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace concernsim {

/// Malformed input document (bad JSON, wrong types, unknown keys).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structurally valid input that violates a domain invariant.
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A concern bank failed validation; carries every violation found.
class ValidationError : public DomainError {
public:
    explicit ValidationError(std::vector<std::string> violations)
        : DomainError(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "bank validation failed:";
        for (const auto& s : v) out += "\n  " + s;
        return out;
    }

    std::vector<std::string> violations_;
};

}  // namespace concernsim
