#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace glt {

struct ShapeMismatchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ZeroRowError : std::domain_error {
    explicit ZeroRowError(std::size_t row_index)
        : std::domain_error("row " + std::to_string(row_index) + " has near-zero norm"),
          row(row_index) {}
    std::size_t row;
};

struct ZeroVectorError : std::domain_error {
    ZeroVectorError() : std::domain_error("vector has near-zero norm") {}
};

struct NonPositiveTemperatureError : std::invalid_argument {
    NonPositiveTemperatureError() : std::invalid_argument("temperature must be > 0") {}
};

struct TooFewSamplesError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct TooFewIdentitiesError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InsufficientDataError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct EntryTooLargeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidDistributionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LengthMismatchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NoValidQueriesError : std::runtime_error {
    NoValidQueriesError() : std::runtime_error("no query has a valid cross-camera match") {}
};

struct ParseError : std::runtime_error {
    ParseError(std::size_t line_number, const std::string& what)
        : std::runtime_error("parse error at line " + std::to_string(line_number) + ": " + what),
          line(line_number) {}
    std::size_t line;
};

struct DimMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace glt
