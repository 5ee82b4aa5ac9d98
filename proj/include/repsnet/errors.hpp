#pragma once

#include <stdexcept>
#include <string>

namespace repsnet {

// Contract violation: bad argument, bad state, precondition failure.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or extent mismatch between tensors.
struct DimensionError : ContractError {
    explicit DimensionError(const std::string& msg) : ContractError(msg) {}
};

// An op produced a non-finite value from finite inputs.
struct NumericError : ContractError {
    explicit NumericError(const std::string& msg) : ContractError(msg) {}
};

// File access or format problem.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace repsnet
