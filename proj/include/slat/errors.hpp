#pragma once
#include <stdexcept>
#include <string>

namespace slat {

// Unreadable/missing/malformed inputs; maps to CLI exit code 3.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures: divergence, non-finite states, empty generation results;
// maps to CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace slat
