#pragma once

#include <stdexcept>
#include <string>

namespace callcast {

enum class ErrorCode {
    MalformedRow,
    DuplicateCell,
    RaggedDay,
    NonDivisor,
    MissingFile,
    EmptySeries,
    AllAliased,
    DomainError,
    NotPositiveDefinite,
    DimensionMismatch,
    SingularDesign,
    NonConvergence,
    LevelOutOfRange,
    CovarianceNotPD,
    Separation,
    NotNested,
    NoComparableDays,
    InsufficientHistory,
    RankDeficient,
    UnseenWeekday,
    NonPositiveInput,
    InvalidCdf,
    TruncationOverflow,
    AlignmentError,
    InvalidConfig,
};

inline const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MalformedRow: return "MalformedRow";
        case ErrorCode::DuplicateCell: return "DuplicateCell";
        case ErrorCode::RaggedDay: return "RaggedDay";
        case ErrorCode::NonDivisor: return "NonDivisor";
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::EmptySeries: return "EmptySeries";
        case ErrorCode::AllAliased: return "AllAliased";
        case ErrorCode::DomainError: return "DomainError";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::SingularDesign: return "SingularDesign";
        case ErrorCode::NonConvergence: return "NonConvergence";
        case ErrorCode::LevelOutOfRange: return "LevelOutOfRange";
        case ErrorCode::CovarianceNotPD: return "CovarianceNotPD";
        case ErrorCode::Separation: return "Separation";
        case ErrorCode::NotNested: return "NotNested";
        case ErrorCode::NoComparableDays: return "NoComparableDays";
        case ErrorCode::InsufficientHistory: return "InsufficientHistory";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::UnseenWeekday: return "UnseenWeekday";
        case ErrorCode::NonPositiveInput: return "NonPositiveInput";
        case ErrorCode::InvalidCdf: return "InvalidCdf";
        case ErrorCode::TruncationOverflow: return "TruncationOverflow";
        case ErrorCode::AlignmentError: return "AlignmentError";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

/// Input-shape problems (bad files, bad flags) as opposed to numerical failures.
inline bool is_validation_error(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MalformedRow:
        case ErrorCode::DuplicateCell:
        case ErrorCode::RaggedDay:
        case ErrorCode::NonDivisor:
        case ErrorCode::MissingFile:
        case ErrorCode::EmptySeries:
        case ErrorCode::LevelOutOfRange:
        case ErrorCode::NonPositiveInput:
        case ErrorCode::AlignmentError:
        case ErrorCode::InvalidConfig:
            return true;
        default:
            return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace callcast
