#include "posediff/errors.hpp"

namespace posediff {

std::string_view error_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidRenderSize: return "InvalidRenderSize";
    case ErrorCode::InvalidTopology: return "InvalidTopology";
    case ErrorCode::GridTooSmall: return "GridTooSmall";
    case ErrorCode::InvalidSigma: return "InvalidSigma";
    case ErrorCode::NonFiniteHeatmap: return "NonFiniteHeatmap";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::EmptyCaption: return "EmptyCaption";
    case ErrorCode::UnknownTokenId: return "UnknownTokenId";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::InconsistentDimension: return "InconsistentDimension";
    case ErrorCode::InvalidSchedule: return "InvalidSchedule";
    case ErrorCode::InvalidTimestep: return "InvalidTimestep";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FinalStepNoise: return "FinalStepNoise";
    case ErrorCode::DivergedSampling: return "DivergedSampling";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::InvalidGrouping: return "InvalidGrouping";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::DegenerateSamples: return "DegenerateSamples";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

}  // namespace posediff
