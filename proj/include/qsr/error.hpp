#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace qsr {

// Input-side failures map to CLI exit code 2, numeric failures to 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public InputError {
public:
    using InputError::InputError;
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

class ParseError : public InputError {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& msg)
        : InputError("line " + std::to_string(line) + ", column " +
                     std::to_string(column) + ": " + msg),
          line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

class StratificationError : public InputError {
public:
    StratificationError(const std::string& cycle)
        : InputError("negation is not stratified: " + cycle), cycle_(cycle) {}

    const std::string& cycle() const noexcept { return cycle_; }

private:
    std::string cycle_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IllConditionedError : public NumericError {
public:
    IllConditionedError(const std::string& what, double residual)
        : NumericError(what + " (residual " + std::to_string(residual) + ")"),
          residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class PoleProximityError : public NumericError {
public:
    PoleProximityError(std::complex<double> root)
        : NumericError("evaluation point lies within 1e-12 of denominator root (" +
                       std::to_string(root.real()) + ", " + std::to_string(root.imag()) + ")"),
          root_(root) {}

    std::complex<double> root() const noexcept { return root_; }

private:
    std::complex<double> root_;
};

class ConvergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

// Pipeline failure annotated with the stage that raised it. `numeric()`
// records whether the underlying error was a NumericError.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what, bool numeric)
        : Error(stage + ": " + what), stage_(std::move(stage)), numeric_(numeric) {}

    const std::string& stage() const noexcept { return stage_; }
    bool numeric() const noexcept { return numeric_; }

private:
    std::string stage_;
    bool numeric_;
};

} // namespace qsr
