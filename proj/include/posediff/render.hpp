#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "posediff/pose.hpp"
#include "posediff/skeleton_graph.hpp"

namespace posediff {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    Rgb at(int x, int y) const {
        const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
        return {pixels[o], pixels[o + 1], pixels[o + 2]};
    }
    void set(int x, int y, const Rgb& c) {
        const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
        pixels[o] = c[0];
        pixels[o + 1] = c[1];
        pixels[o + 2] = c[2];
    }
};

/// Limb width in pixels: 2 px for a 64 px image, linear in image size.
double limb_thickness(int image_size);
double joint_radius(int image_size);

/// Draws limbs (both endpoints visible) then joint discs on a black canvas.
/// `grid_size` is the heatmap resolution the pose coordinates refer to.
/// Throws InvalidRenderSize when image_size < 32.
RgbImage render_pose(const Pose& pose, const SkeletonTopology& topology, int image_size, int grid_size);

/// Grid coordinate -> image pixel coordinate (pixel centres aligned).
double grid_to_image(double coordinate, int image_size, int grid_size);

void write_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace posediff
