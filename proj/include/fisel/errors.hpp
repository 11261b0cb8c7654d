#pragma once

#include <stdexcept>
#include <string>

namespace fisel {

// Error categories map onto CLI exit codes: ConfigError -> 1, DataError -> 2,
// IntegrityError (and any other failure) -> 3.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

// Shape/contract violations inside the numeric kernel.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// API misuse that no input file can trigger (e.g. gating a same-field pair).
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace fisel
