#pragma once

#include <stdexcept>
#include <string>

namespace profmon {

// Root of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ModelFitError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what, int epoch = -1)
        : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class UnsupportedStatistic : public Error {
public:
    using Error::Error;
};

// Persisted artifact has an unknown magic/version or does not match the caller.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

// Correlation over a constant series.
class UndefinedCorrelation : public Error {
public:
    using Error::Error;
};

}  // namespace profmon
