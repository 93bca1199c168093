#pragma once

#include <stdexcept>
#include <string>

namespace sail {

/// Bad argument or violated precondition. CLI exit code 2.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Missing, unreadable or malformed input artifact. CLI exit code 3.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: singular systems, undefined statistics. CLI exit code 4.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sail
