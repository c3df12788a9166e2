#pragma once

#include <stdexcept>
#include <string>

namespace cste {

// Exit-code classes used by the command line front end.
enum class ErrorClass { config = 2, data = 3, numeric = 4 };

/**
 * Base error. `code` is module-qualified, e.g. "optim.numeric_overflow",
 * so that callers and the CLI can report it in machine-readable form.
 */
class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, std::string code, const std::string& what)
        : std::runtime_error(what), cls_(cls), code_(std::move(code)) {}

    ErrorClass error_class() const noexcept { return cls_; }
    const std::string& code() const noexcept { return code_; }
    int exit_code() const noexcept { return static_cast<int>(cls_); }

private:
    ErrorClass cls_;
    std::string code_;
};

class ArgumentError : public Error {
public:
    ArgumentError(std::string code, const std::string& what)
        : Error(ErrorClass::config, std::move(code), what) {}
};

class DataError : public Error {
public:
    DataError(std::string code, const std::string& what)
        : Error(ErrorClass::data, std::move(code), what) {}
};

class NumericError : public Error {
public:
    NumericError(std::string code, const std::string& what)
        : Error(ErrorClass::numeric, std::move(code), what) {}
};

// Thrown when exp() of a linear predictor would overflow or the predictor
// diverges (separation).
class NumericOverflow : public NumericError {
public:
    NumericOverflow(const std::string& module, double eta);
    double linear_predictor() const noexcept { return eta_; }

private:
    double eta_;
};

class DegenerateData : public DataError {
public:
    DegenerateData(const std::string& module, const std::string& what)
        : DataError(module + ".degenerate_data", what) {}
};

class SingularDesign : public NumericError {
public:
    SingularDesign(const std::string& module, const std::string& what)
        : NumericError(module + ".singular_design", what) {}
};

}  // namespace cste
