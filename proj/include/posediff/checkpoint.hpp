#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "posediff/gunet.hpp"

namespace posediff {

using Buffers = std::map<std::string, Eigen::MatrixXf>;

/// "PDCK" container: u32 version, u32 header length, JSON header (config,
/// metadata, tensor and buffer tables), float32 little-endian parameter
/// tensors then buffers in header order (column-major), trailing CRC-32 of
/// everything before it. Buffers are non-trained arrays kept alongside.
void save_checkpoint(const std::filesystem::path& path, const Denoiser<float>& model, const nlohmann::json& metadata,
                     const Buffers& buffers = {});

struct LoadedCheckpoint {
    Denoiser<float> model;
    nlohmann::json metadata;
    Buffers buffers;
};

/// Rebuilds the denoiser from the stored config and checks every tensor
/// against it. Throws UnsupportedFormat or CorruptFile.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const SkeletonTopology& topology);

}  // namespace posediff
