#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxpost {

enum class ErrorKind {
    UnsupportedDatatype,
    MalformedHeader,
    NonFiniteVoxel,
    DimensionMismatch,
    IoFailure,
    BadWeights,
    TooFewInputs,
    BadKernel,
    DegenerateRoi,
    ConstantReference,
    EmptyRoi,
    VolumeTooSmall,
    IncompleteGrid,
    DuplicateReport,
    LayoutError,
    EmptyDataset,
    ConfigError,
    InvalidArgument,
};

constexpr std::string_view to_string(ErrorKind k) noexcept {
    switch (k) {
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::NonFiniteVoxel: return "NonFiniteVoxel";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::BadWeights: return "BadWeights";
    case ErrorKind::TooFewInputs: return "TooFewInputs";
    case ErrorKind::BadKernel: return "BadKernel";
    case ErrorKind::DegenerateRoi: return "DegenerateRoi";
    case ErrorKind::ConstantReference: return "ConstantReference";
    case ErrorKind::EmptyRoi: return "EmptyRoi";
    case ErrorKind::VolumeTooSmall: return "VolumeTooSmall";
    case ErrorKind::IncompleteGrid: return "IncompleteGrid";
    case ErrorKind::DuplicateReport: return "DuplicateReport";
    case ErrorKind::LayoutError: return "LayoutError";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying its kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// The message without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

} // namespace voxpost
