#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metamix {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration or violated call precondition.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Tensor/width mismatch between values that must be shape-congruent.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad example data (labels out of range, malformed rows).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite loss or parameters during training; carries the step index.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, std::size_t step)
        : Error(msg + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

// Mismatched operands handed to the parameter-interpolation routines.
class EnsembleError : public Error {
public:
    explicit EnsembleError(const std::string& msg) : Error(msg) {}
};

// Protocol rule broken (sampling an empty buffer, meta-update on task 1).
class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

// Accuracy-matrix misuse: overwrite, out-of-triangle access, missing cells.
class BookkeepingError : public Error {
public:
    explicit BookkeepingError(const std::string& msg) : Error(msg) {}
};

// Metric requested on a matrix where it is not defined (e.g. BWT with T=1).
class UndefinedMetricError : public Error {
public:
    explicit UndefinedMetricError(const std::string& msg) : Error(msg) {}
};

// Malformed dataset file; carries the byte offset where parsing failed.
class IngestError : public Error {
public:
    IngestError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}
    std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

// Filesystem failure while writing results.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Checkpoint file does not match its own header.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

}  // namespace metamix
