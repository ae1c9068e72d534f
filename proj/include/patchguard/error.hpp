#pragma once

#include <stdexcept>
#include <string>

namespace patchguard {

// Exit-code classes used by the CLI: usage = 1, data = 2, anything else = 3.
enum class ErrorClass { usage, data };

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
    ErrorClass error_class() const noexcept { return cls_; }

private:
    ErrorClass cls_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorClass::usage, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorClass::data, what) {}
};

// Bad magic, bad version, malformed records.
struct FormatError : DataError {
    explicit FormatError(const std::string& what) : DataError("format error: " + what) {}
};

// Length or header/payload disagreement.
struct CorruptFileError : DataError {
    explicit CorruptFileError(const std::string& what) : DataError("corrupt file: " + what) {}
};

// Non-finite values, zero-norm vectors, broken invariants.
struct ValidationError : DataError {
    explicit ValidationError(const std::string& what) : DataError("validation error: " + what) {}
};

struct IncompatibleError : DataError {
    explicit IncompatibleError(const std::string& what) : DataError("incompatible: " + what) {}
};

struct EmptyCacheError : DataError {
    explicit EmptyCacheError(const std::string& what) : DataError("empty cache: " + what) {}
};

struct CalibrationError : DataError {
    explicit CalibrationError(const std::string& what) : DataError("calibration error: " + what) {}
};

struct GeometryError : DataError {
    explicit GeometryError(const std::string& what) : DataError("geometry mismatch: " + what) {}
};

struct IoError : DataError {
    explicit IoError(const std::string& what) : DataError("I/O error: " + what) {}
};

}  // namespace patchguard
