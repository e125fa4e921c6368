#pragma once

#include <stdexcept>
#include <string>

namespace dae {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Command line / configuration misuse. CLI exit code 1.
class UsageError : public Error {
public:
    using Error::Error;
};

// Bad file contents, bad manifest, missing data. CLI exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed binary payloads; message carries the byte offset.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

// A caller violated an API precondition (shape mismatch, non-scalar loss, ...).
class ContractError : public DataError {
public:
    using DataError::DataError;
};

// Tensor shape incompatibility; message names both shapes.
class ShapeError : public ContractError {
public:
    using ContractError::ContractError;
};

// Out-of-range parameter values (crop larger than volume, dims too small, ...).
class ParamError : public DataError {
public:
    using DataError::DataError;
};

// Numeric failure: non-finite loss or gradient, failed gradient check.
// CLI exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace dae
