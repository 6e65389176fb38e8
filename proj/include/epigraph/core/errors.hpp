#pragma once

#include <stdexcept>
#include <string>

namespace epigraph {

// Base for every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Value outside a supported domain (e.g. calendar dates).
class RangeError : public Error {
public:
    using Error::Error;
};

// Input data violates schema or quality limits (gaps, malformed rows).
class DataQualityError : public Error {
public:
    using Error::Error;
};

// Malformed input file (bad header, unparsable cell).
class SchemaError : public DataQualityError {
public:
    using DataQualityError::DataQualityError;
};

// A required artifact (checkpoint, table) is missing or unreadable.
class ArtifactError : public Error {
public:
    using Error::Error;
};

}  // namespace epigraph
