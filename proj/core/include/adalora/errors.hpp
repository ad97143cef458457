#pragma once

#include <stdexcept>
#include <string>

namespace adalora {

/// Shape disagreement between operands.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value or combination.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse: a precondition of the call sequence was violated.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

/// Bad runtime input (out-of-range label, malformed file, ...).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace adalora
