#pragma once

#include <stdexcept>
#include <string>

namespace semd {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/array shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

// backward() called on a non-scalar tensor.
class RankError : public Error {
public:
    using Error::Error;
};

// Batch normalization in training mode with batch size < 2.
class DegenerateBatchError : public Error {
public:
    using Error::Error;
};

// Optimizer step requested for a parameter with no gradient.
class UninitializedGradientError : public Error {
public:
    using Error::Error;
};

// Invalid network or training configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Out-of-range branch/entry index.
class IndexError : public Error {
public:
    using Error::Error;
};

// Metric requested on an empty point set.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

// EMD on point sets of unequal cardinality.
class CardinalityError : public Error {
public:
    using Error::Error;
};

// File could not be opened / read / written.
class IoError : public Error {
public:
    using Error::Error;
};

// Container is structurally damaged (bad magic, truncation, bogus sizes).
class CorruptContainerError : public IoError {
public:
    using IoError::IoError;
};

// Container has an unsupported format version.
class VersionError : public IoError {
public:
    using IoError::IoError;
};

// Training diverged (non-finite loss) or stalled past its abort limit.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace semd
