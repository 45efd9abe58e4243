#pragma once
// Error taxonomy. Every failure surfaces as one of these; the CLI maps them
// to stable exit codes (1 = input/config, 2 = numerical/contract).

#include <stdexcept>
#include <string>

namespace halluc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept = 0;
};

// Malformed or out-of-range input data.
class InputError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

// Inconsistent configuration (odd embed dim, k <= 0, vocab mismatch, ...).
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

// A quantity is mathematically undefined or numerically unusable.
class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

// A pluggable component broke its contract (e.g. verifier score outside [0,1]).
class ContractError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

namespace detail {
inline void require_input(bool ok, const std::string& msg) {
    if (!ok) throw InputError(msg);
}
inline void require_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}
}  // namespace detail

}  // namespace halluc
