#pragma once

#include <cmath>
#include <filesystem>
#include <limits>

#include <Eigen/Core>
#include <json.hpp>

#include "posediff/errors.hpp"
#include "posediff/pose.hpp"

namespace posediff {

/// K Gaussian keypoint maps of size S x S, stored keypoint-major, then row,
/// then column. Viewed as a matrix it is (S*S) x K with one column per keypoint,
/// which is also the per-sample layout the denoiser consumes.
struct HeatmapStack {
    int keypoints = 0;
    int grid_size = 0;
    float sigma = 0.0f;
    Eigen::VectorXf values;

    HeatmapStack() = default;
    HeatmapStack(int k, int s, float sig)
        : keypoints(k), grid_size(s), sigma(sig), values(Eigen::VectorXf::Zero(static_cast<Eigen::Index>(k) * s * s)) {}

    Eigen::Map<Eigen::MatrixXf> columns() { return {values.data(), grid_size * grid_size, keypoints}; }
    Eigen::Map<const Eigen::MatrixXf> columns() const { return {values.data(), grid_size * grid_size, keypoints}; }

    float at(int k, int y, int x) const {
        return values[(static_cast<Eigen::Index>(k) * grid_size + y) * grid_size + x];
    }
};

inline double default_sigma(int grid_size) { return grid_size / 32.0; }
constexpr double kDefaultVisibilityThreshold = 0.2;

/// Gaussian bump per visible keypoint, evaluated at integer pixel centres;
/// invisible keypoints give all-zero maps.
HeatmapStack encode_pose(const Pose& pose, int grid_size, double sigma);

/// Argmax decoding over one column per keypoint (row-major S x S grid).
/// Ties resolve to the smallest row-major index. Maps whose maximum is below
/// `visibility_threshold` decode as invisible.
template <typename Derived>
Pose decode_heatmaps(const Eigen::MatrixBase<Derived>& columns, int grid_size, double visibility_threshold) {
    if (columns.rows() != static_cast<Eigen::Index>(grid_size) * grid_size)
        throw Error(ErrorCode::ShapeMismatch, "heatmap rows do not match grid size");
    if (!columns.allFinite()) throw Error(ErrorCode::NonFiniteHeatmap, "heatmap contains non-finite values");
    Pose pose(columns.cols());
    for (Eigen::Index k = 0; k < columns.cols(); ++k) {
        Eigen::Index best = 0;
        auto best_value = columns(0, k);
        for (Eigen::Index i = 1; i < columns.rows(); ++i) {
            if (columns(i, k) > best_value) {
                best_value = columns(i, k);
                best = i;
            }
        }
        pose.xy(k, 0) = static_cast<double>(best % grid_size);
        pose.xy(k, 1) = static_cast<double>(best / grid_size);
        pose.visible(k) = static_cast<double>(best_value) >= visibility_threshold;
    }
    return pose;
}

inline Pose decode_heatmaps(const HeatmapStack& stack, double visibility_threshold = kDefaultVisibilityThreshold) {
    return decode_heatmaps(stack.columns(), stack.grid_size, visibility_threshold);
}

/// Binary "PDHM" container, version 1, little-endian.
void write_heatmap_file(const HeatmapStack& stack, const std::filesystem::path& path);
HeatmapStack read_heatmap_file(const std::filesystem::path& path);

/// {"keypoints": [[x, y, v], ...]}. Invisible keypoints are written as [0, 0, 0].
nlohmann::json pose_to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& j);
Pose read_pose_file(const std::filesystem::path& path);
void write_pose_file(const Pose& pose, const std::filesystem::path& path);

/// Visible coordinates lie in [0, S).
bool pose_within_grid(const Pose& pose, int grid_size);

}  // namespace posediff
