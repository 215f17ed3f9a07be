#pragma once

#include <stdexcept>
#include <string>

namespace scaler {

// Error taxonomy mirrors the CLI exit codes: usage 2, I/O 3, numeric 4,
// artifact mismatch 5. Library code throws these; main() maps them.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

class ArtifactError : public Error {
public:
    explicit ArtifactError(const std::string& msg) : Error(msg) {}
};

} // namespace scaler
