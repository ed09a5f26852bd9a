#pragma once
#include <stdexcept>
#include <string>

namespace bprl {

// Caller handed us something that violates a precondition (bad dims, bad
// label, malformed config). Maps to exit code 2 in the CLI.
struct InvalidInput : std::invalid_argument {
    explicit InvalidInput(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical failure during an optimization loop (NaN/Inf loss). Exit code 3.
struct Diverged : std::runtime_error {
    explicit Diverged(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace bprl
