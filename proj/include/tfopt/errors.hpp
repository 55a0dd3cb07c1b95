#pragma once

#include <stdexcept>
#include <string>

namespace tfopt {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DefinitenessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SymmetryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LayoutError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct BudgetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown by iterative drivers; the partial trace travels with the exception.
template <class Trace>
struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, Trace partial)
        : std::runtime_error(what), trace(std::move(partial)) {}
    Trace trace;
};

}  // namespace tfopt
