#pragma once

#include <stdexcept>
#include <string>

namespace epsarb {

/// Malformed input: bad shapes, invalid markets, unknown ids.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The requested quantity does not exist for this market (e.g. NA_eps fails).
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A solver could not reach a trustworthy answer.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace epsarb
