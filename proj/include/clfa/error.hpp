#pragma once

#include <stdexcept>
#include <string>

namespace clfa {

enum class ErrorCode {
    // ingest
    MalformedHeader,
    TooFewSamples,
    NonMonotonicTime,
    EmptyStream,
    MissingFile,
    DuplicateEntry,
    // kinematics / render
    DegenerateTime,
    SeriesTooShort,
    DegenerateExtent,
    // prompts
    UnknownState,
    EncoderWidthMismatch,
    // tensor core
    ShapeMismatch,
    EvenKernel,
    NonScalarLoss,
    // backbone
    IndivisibleSize,
    ConfigMismatch,
    // adapter / scoring
    UnknownMode,
    EmptyLayerList,
    // trainer
    SingleClassTask,
    EmptyTask,
    ManifestMismatch,
    TruncatedBlob,
    // evaluator
    SingleClass,
    UncategorizedTask,
    MissingCheckpoint,
    // generic
    IoError,
    InvalidArgument,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
        case ErrorCode::EmptyStream: return "EmptyStream";
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::DuplicateEntry: return "DuplicateEntry";
        case ErrorCode::DegenerateTime: return "DegenerateTime";
        case ErrorCode::SeriesTooShort: return "SeriesTooShort";
        case ErrorCode::DegenerateExtent: return "DegenerateExtent";
        case ErrorCode::UnknownState: return "UnknownState";
        case ErrorCode::EncoderWidthMismatch: return "EncoderWidthMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EvenKernel: return "EvenKernel";
        case ErrorCode::NonScalarLoss: return "NonScalarLoss";
        case ErrorCode::IndivisibleSize: return "IndivisibleSize";
        case ErrorCode::ConfigMismatch: return "ConfigMismatch";
        case ErrorCode::UnknownMode: return "UnknownMode";
        case ErrorCode::EmptyLayerList: return "EmptyLayerList";
        case ErrorCode::SingleClassTask: return "SingleClassTask";
        case ErrorCode::EmptyTask: return "EmptyTask";
        case ErrorCode::ManifestMismatch: return "ManifestMismatch";
        case ErrorCode::TruncatedBlob: return "TruncatedBlob";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::UncategorizedTask: return "UncategorizedTask";
        case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Library-wide exception carrying a stable error code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace clfa
