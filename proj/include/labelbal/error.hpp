#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace labelbal {

enum class ErrorKind {
    invalid_input,  // bad argument values
    dimension,      // shape mismatch
    config,         // invalid configuration
    numeric,        // divergence / non-finite values
    io,             // file access or malformed file content
    degenerate      // data cannot support the requested operation
};

/// Exception carrying a stable machine-readable code such as
/// `config.cyclic_rules` next to the human message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

/// Process exit code for an error kind: 2 config/usage, 3 numeric, 4 I/O.
inline int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::numeric:
    case ErrorKind::degenerate:
        return 3;
    case ErrorKind::io:
        return 4;
    case ErrorKind::invalid_input:
    case ErrorKind::dimension:
    case ErrorKind::config:
        break;
    }
    return 2;
}

[[noreturn]] inline void fail(ErrorKind kind, std::string code, const std::string& message) {
    throw Error(kind, std::move(code), message);
}

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) {
        fail(ErrorKind::dimension, "shape.mismatch", "shape mismatch: " + what);
    }
}

} // namespace labelbal
