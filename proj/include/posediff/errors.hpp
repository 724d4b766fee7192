#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posediff {

enum class ErrorCode {
    InvalidRenderSize,
    InvalidTopology,
    GridTooSmall,
    InvalidSigma,
    NonFiniteHeatmap,
    UnsupportedFormat,
    CorruptFile,
    EmptyCaption,
    UnknownTokenId,
    MissingEmbedding,
    InconsistentDimension,
    InvalidSchedule,
    InvalidTimestep,
    ShapeMismatch,
    FinalStepNoise,
    DivergedSampling,
    NonFiniteInput,
    InvalidGrouping,
    InvalidConfig,
    ParseError,
    EmptyDataset,
    DivergedTraining,
    DegenerateSamples,
    IoError,
};

std::string_view error_name(ErrorCode code);

/// Exception carrying one of the library's named error conditions.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail);

    ErrorCode code() const noexcept { return code_; }
    std::string_view name() const noexcept { return error_name(code_); }

private:
    ErrorCode code_;
};

}  // namespace posediff
