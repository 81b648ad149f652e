#pragma once

#include <stdexcept>
#include <string>

namespace vton {

// Error taxonomy shared by the whole library. The C API maps these onto
// status codes; the CLI maps them onto exit codes (2 for argument/config
// problems, 3 for runtime failures).
class InvalidArgument : public std::invalid_argument {
public:
    explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

class InvalidState : public std::logic_error {
public:
    explicit InvalidState(const std::string& msg) : std::logic_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class TrainingDivergence : public std::runtime_error {
public:
    explicit TrainingDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vton
