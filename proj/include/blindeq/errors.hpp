#pragma once

#include <stdexcept>
#include <string>

namespace blindeq {

/// Base of all library errors. The category drives the CLI exit code.
class Error : public std::runtime_error {
public:
    enum class Category { contract = 1, config = 2, numeric = 3, io = 4 };

    Error(Category cat, const std::string& what) : std::runtime_error(what), category_(cat) {}

    Category category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    Category category_;
};

/// Violated precondition (shape mismatch, invalid argument).
struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(Category::contract, what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(Category::config, what) {}
};

/// Non-finite loss or gradient, singular system, divergence.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(Category::numeric, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(Category::io, what) {}
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ContractError(what);
}

} // namespace blindeq
