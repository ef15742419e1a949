#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nlsid {

// Invalid configuration or violated precondition. The CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A numerical procedure could not produce a result (singular data, no excitation, ...).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A simulation blew up. Carries the sample index where it happened.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, std::size_t index)
        : NumericError(what + " (diverged at sample " + std::to_string(index) + ")"), index_(index) {}

    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

}  // namespace nlsid
