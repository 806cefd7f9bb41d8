#ifndef DIT_ERRORS_HPP
#define DIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dit {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// An argument value outside its documented range.
struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an API contract (non-scalar loss, zero vector, missing grad).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file content; message carries the byte offset where parsing stopped.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failure; message carries the path.
struct FileError : std::runtime_error {
    explicit FileError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint/config incompatibility (bad magic, version, unknown parameter).
struct VersionError : std::runtime_error {
    explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dit

#endif
