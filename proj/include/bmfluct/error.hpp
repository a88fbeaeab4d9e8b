#pragma once

#include <stdexcept>
#include <string>

namespace bmfluct {

// Exit-code classes used by the CLI: input problems map to 2, numerical
// non-convergence to 3. Precondition violations are input errors.
enum class ErrorKind { input, precondition, numerical, domain };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Malformed model/eigen input; `path` is a JSON-pointer-like field path.
class InputError : public Error {
public:
    InputError(std::string path, const std::string& msg)
        : Error(ErrorKind::input, path.empty() ? msg : path + ": " + msg),
          path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& msg)
        : Error(ErrorKind::precondition, msg) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(ErrorKind::domain, msg) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(ErrorKind::numerical, msg) {}
};

}  // namespace bmfluct
