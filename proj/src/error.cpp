#include "protum/error.hpp"

namespace protum {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::MissingField: return "MissingField";
        case ErrorKind::MissingLabel: return "MissingLabel";
        case ErrorKind::UnknownTemplate: return "UnknownTemplate";
        case ErrorKind::InvalidTask: return "InvalidTask";
        case ErrorKind::InvalidLabel: return "InvalidLabel";
        case ErrorKind::MissingAnswerTokenCount: return "MissingAnswerTokenCount";
        case ErrorKind::InvalidProbability: return "InvalidProbability";
        case ErrorKind::InvalidSequence: return "InvalidSequence";
        case ErrorKind::NoMaskablePositions: return "NoMaskablePositions";
        case ErrorKind::HeterogeneousRecords: return "HeterogeneousRecords";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NonFiniteValue: return "NonFiniteValue";
        case ErrorKind::FormatError: return "FormatError";
        case ErrorKind::TruncatedFile: return "TruncatedFile";
        case ErrorKind::CorruptRecord: return "CorruptRecord";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::InvalidSpec: return "InvalidSpec";
        case ErrorKind::LayerOutOfRange: return "LayerOutOfRange";
        case ErrorKind::InvalidTopology: return "InvalidTopology";
        case ErrorKind::CacheMismatch: return "CacheMismatch";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::EmptyDataset: return "EmptyDataset";
        case ErrorKind::UnlabeledData: return "UnlabeledData";
        case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    }
    return "Unknown";
}

ErrorCategory category_of(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::FormatError:
        case ErrorKind::TruncatedFile:
        case ErrorKind::CorruptRecord:
        case ErrorKind::IoError:
        case ErrorKind::ParseError:
            return ErrorCategory::data_format;
        case ErrorKind::EmptyDataset:
        case ErrorKind::TrainingDiverged:
            return ErrorCategory::training;
        default:
            return ErrorCategory::validation;
    }
}

}  // namespace protum
