#pragma once

#include <stdexcept>
#include <string>

namespace xproto {

// Malformed input data or a violated data invariant. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure inside an algorithm (non-finite update, undefined cosine, ...).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace xproto
