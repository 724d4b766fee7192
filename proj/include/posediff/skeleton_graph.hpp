#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

using Rgb = std::array<std::uint8_t, 3>;

/// Keypoint set, limb list and palette of a 2D skeleton.
struct SkeletonTopology {
    std::vector<std::string> keypoint_names;
    std::vector<std::pair<int, int>> edges;
    std::vector<Rgb> limb_colors;
    std::vector<Rgb> point_colors;

    int keypoint_count() const { return static_cast<int>(keypoint_names.size()); }

    /// Throws InvalidTopology on out-of-range indices, self-loops, duplicate
    /// edges or palette sizes that do not match.
    void validate() const;
};

/// 17-keypoint COCO skeleton with the 19-limb OpenPose-style connection list.
SkeletonTopology build_default_topology();

/// The OpenPose rainbow palette, extended by one grey entry so that each of
/// the 19 default limbs gets a distinct colour.
const std::vector<Rgb>& openpose_palette();

/// Binary, symmetric, zero-diagonal adjacency of the topology's edges.
Eigen::MatrixXd adjacency(const SkeletonTopology& topology);

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
normalize_adjacency(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index n = a.rows();
    Mat with_loops = a + Mat::Identity(n, n);
    // Degrees are >= 1 thanks to the self loop.
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sqrt_degree =
        with_loops.rowwise().sum().array().rsqrt().matrix();
    Mat out = inv_sqrt_degree.asDiagonal() * with_loops * inv_sqrt_degree.asDiagonal();
    // Make the result exactly symmetric regardless of rounding order.
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) out(j, i) = out(i, j);
    }
    return out;
}

/// Number of connected components (breadth-first search over the edge list).
int connected_components(const SkeletonTopology& topology);

nlohmann::json topology_to_json(const SkeletonTopology& topology);
SkeletonTopology topology_from_json(const nlohmann::json& j);

}  // namespace posediff
