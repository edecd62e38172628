#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace concnn {

/// Failure kinds raised across the library. The CLI maps each kind onto an
/// exit status through error_category().
enum class ErrorCode {
    // data
    MissingColumn,
    NegativeSales,
    ConflictingDuplicate,
    EmptyFile,
    MalformedValue,
    NonPositiveOracleValue,
    WindowTooLarge,
    LengthMismatch,
    InvalidSplit,
    HorizonExceedsHistory,
    InsufficientHistory,
    UnknownFeature,
    ZeroActualTotal,
    EmptyBatch,
    EmptyThetaSamples,
    IdenticalStates,
    // configuration / contract
    InvalidArchitecture,
    ArchitectureMismatch,
    InvalidConfig,
    InvalidDelta,
    RhoOutOfRange,
    InvalidModelFile,
    // numerical
    NonFiniteInput,
    NegativeWeightFromPhi,
    NonPositivePrediction,
    DivergedLoss,
    AllCandidatesDiverged,
    TrainingDiverged,
};

enum class ErrorCategory { Config = 1, Data = 2, Numerical = 3 };

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NegativeSales: return "NegativeSales";
    case ErrorCode::ConflictingDuplicate: return "ConflictingDuplicate";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::MalformedValue: return "MalformedValue";
    case ErrorCode::NonPositiveOracleValue: return "NonPositiveOracleValue";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidSplit: return "InvalidSplit";
    case ErrorCode::HorizonExceedsHistory: return "HorizonExceedsHistory";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::UnknownFeature: return "UnknownFeature";
    case ErrorCode::ZeroActualTotal: return "ZeroActualTotal";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyThetaSamples: return "EmptyThetaSamples";
    case ErrorCode::IdenticalStates: return "IdenticalStates";
    case ErrorCode::InvalidArchitecture: return "InvalidArchitecture";
    case ErrorCode::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidDelta: return "InvalidDelta";
    case ErrorCode::RhoOutOfRange: return "RhoOutOfRange";
    case ErrorCode::InvalidModelFile: return "InvalidModelFile";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NegativeWeightFromPhi: return "NegativeWeightFromPhi";
    case ErrorCode::NonPositivePrediction: return "NonPositivePrediction";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::AllCandidatesDiverged: return "AllCandidatesDiverged";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    }
    return "Unknown";
}

constexpr ErrorCategory error_category(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArchitecture:
    case ErrorCode::ArchitectureMismatch:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidDelta:
    case ErrorCode::RhoOutOfRange:
    case ErrorCode::InvalidModelFile:
        return ErrorCategory::Config;
    case ErrorCode::NonFiniteInput:
    case ErrorCode::NegativeWeightFromPhi:
    case ErrorCode::NonPositivePrediction:
    case ErrorCode::DivergedLoss:
    case ErrorCode::AllCandidatesDiverged:
    case ErrorCode::TrainingDiverged:
        return ErrorCategory::Numerical;
    default:
        return ErrorCategory::Data;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] ErrorCategory category() const noexcept { return error_category(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        fail(code, message);
    }
}

} // namespace concnn
