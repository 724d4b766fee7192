#pragma once

#include <Eigen/Core>

namespace posediff {

/// Keypoint coordinates in heatmap grid units (x = column, y = row) plus
/// per-keypoint visibility. Coordinates of invisible keypoints carry no meaning.
struct Pose {
    Eigen::Matrix<double, Eigen::Dynamic, 2> xy;
    Eigen::Array<bool, Eigen::Dynamic, 1> visible;

    Pose() = default;
    explicit Pose(Eigen::Index keypoints)
        : xy(Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(keypoints, 2)),
          visible(Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(keypoints, false)) {}

    Eigen::Index size() const { return xy.rows(); }
    Eigen::Index visible_count() const { return visible.count(); }

    bool operator==(const Pose& other) const {
        return xy == other.xy && (visible == other.visible).all();
    }
};

}  // namespace posediff
