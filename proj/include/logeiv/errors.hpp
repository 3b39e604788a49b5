#pragma once

#include <stdexcept>
#include <string>

namespace logeiv {

// Base of every error the library throws. `category()` is a short
// machine-readable tag used by the CLI for exit codes and stderr lines.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
    virtual const char* category() const noexcept { return "error"; }
};

// Malformed files, bad shapes, out-of-range arguments.
class InputError : public Error
{
public:
    using Error::Error;
    const char* category() const noexcept override { return "input"; }
};

// Rank deficiency, infeasible constraints, non-finite intermediate values.
class NumericalError : public Error
{
public:
    using Error::Error;
    const char* category() const noexcept override { return "numerical"; }
};

// Work that would exceed an explicit budget (e.g. exhaustive enumeration).
class BudgetError : public Error
{
public:
    using Error::Error;
    const char* category() const noexcept override { return "budget"; }
};

} // namespace logeiv
