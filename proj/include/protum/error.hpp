#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace protum {

enum class ErrorKind {
    // template engine
    MissingField,
    MissingLabel,
    UnknownTemplate,
    InvalidTask,
    InvalidLabel,
    MissingAnswerTokenCount,
    // masking
    InvalidProbability,
    InvalidSequence,
    NoMaskablePositions,
    HeterogeneousRecords,
    // tensors and heads
    ShapeMismatch,
    NonFiniteValue,
    FormatError,
    TruncatedFile,
    CorruptRecord,
    IoError,
    ParseError,
    InvalidSpec,
    LayerOutOfRange,
    InvalidTopology,
    CacheMismatch,
    // training
    InvalidConfig,
    EmptyDataset,
    UnlabeledData,
    TrainingDiverged,
};

/// Coarse grouping used for CLI exit codes.
enum class ErrorCategory { validation, data_format, training };

std::string_view to_string(ErrorKind kind) noexcept;
ErrorCategory category_of(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    ErrorCategory category() const noexcept { return category_of(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace protum
