#pragma once

#include <stdexcept>
#include <string>

namespace termsum {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Bad configuration value, unknown key or malformed config text.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Serialized artifact could not be read back.
class FormatError : public Error {
public:
    using Error::Error;
};

class VersionError : public FormatError {
public:
    VersionError(int found, int supported)
        : FormatError("unsupported format version " + std::to_string(found) +
                      " (this build reads up to version " + std::to_string(supported) + ")"),
          found_(found), supported_(supported) {}
    int found() const noexcept { return found_; }
    int supported() const noexcept { return supported_; }

private:
    int found_;
    int supported_;
};

class TruncationError : public FormatError {
public:
    using FormatError::FormatError;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Raised by score evaluation (degenerate ensembles, empty inputs).
class ScoreError : public Error {
public:
    using Error::Error;
};

/// Numerical blow-up during training.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// A bounded search ran out of budget.
class BudgetError : public Error {
public:
    BudgetError(const std::string& what, int found) : Error(what), found_(found) {}
    int found() const noexcept { return found_; }

private:
    int found_;
};

/// Deterministic replay did not reproduce the stored episode.
class IntegrityError : public Error {
public:
    using Error::Error;
};

}  // namespace termsum
