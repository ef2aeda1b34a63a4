/**
 * @file error.hpp
 * @brief Error taxonomy shared by all pipeline stages.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace tsr {

enum class ErrorCode {
    MissingFile,
    IoError,
    SchemaViolation,
    UnresolvedClass,
    MissingTemplateImage,
    DuplicateClassId,
    SingletonGroup,
    UnknownLabel,
    DimensionMismatch,
    RegionOutOfBounds,
    AuthError,
    RateLimited,
    Timeout,
    MalformedResponse,
    ParseFailure,
    CoverageGap,
    ConfigViolation,
    AlignmentError,
    Internal,
};

inline const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::UnresolvedClass: return "UnresolvedClass";
        case ErrorCode::MissingTemplateImage: return "MissingTemplateImage";
        case ErrorCode::DuplicateClassId: return "DuplicateClassId";
        case ErrorCode::SingletonGroup: return "SingletonGroup";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::RegionOutOfBounds: return "RegionOutOfBounds";
        case ErrorCode::AuthError: return "AuthError";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::ParseFailure: return "ParseFailure";
        case ErrorCode::CoverageGap: return "CoverageGap";
        case ErrorCode::ConfigViolation: return "ConfigViolation";
        case ErrorCode::AlignmentError: return "AlignmentError";
        case ErrorCode::Internal: return "Internal";
    }
    return "Unknown";
}

/// Single exception type; callers dispatch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

/// True for failures originating in an LMM backend call.
inline bool is_lmm_error(ErrorCode code) {
    return code == ErrorCode::AuthError || code == ErrorCode::RateLimited ||
           code == ErrorCode::Timeout || code == ErrorCode::MalformedResponse;
}

}  // namespace tsr
