#pragma once

#include <stdexcept>
#include <string>

namespace sklaw {

// Base error for everything raised by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed files, invalid configuration, broken invariants
// in supplied data. The CLI maps these to exit code 1.
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Parse failure with a 1-based line number, for line-oriented formats.
struct ParseError : ValidationError {
    ParseError(const std::string& msg, int line_no)
        : ValidationError(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    int line;
};

}  // namespace sklaw
