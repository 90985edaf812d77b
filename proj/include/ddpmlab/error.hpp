#pragma once

#include <stdexcept>
#include <string>

namespace ddpmlab {

// Argument outside the mathematical domain of a function (negative time, pole at t = 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Invalid schedule / target / experiment configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite or otherwise unusable number.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Failure inside a reverse chain; carries the chain and step where it happened.
class ChainError : public NumericError {
public:
    ChainError(const std::string& what, long chain, int step)
        : NumericError(what + " (chain " + std::to_string(chain) + ", step " + std::to_string(step) + ")"),
          chain_(chain), step_(step) {}

    long chain() const noexcept { return chain_; }
    int step() const noexcept { return step_; }

private:
    long chain_;
    int step_;
};

}  // namespace ddpmlab
