#include "posediff/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace posediff {

double limb_thickness(int image_size) { return 2.0 * image_size / 64.0; }

double joint_radius(int image_size) { return 1.5 * limb_thickness(image_size); }

double grid_to_image(double coordinate, int image_size, int grid_size) {
    const double scale = static_cast<double>(image_size) / grid_size;
    return (coordinate + 0.5) * scale - 0.5;
}

namespace {

void draw_segment(RgbImage& img, double x0, double y0, double x1, double y1, double half_width,
                  const Rgb& color) {
    const int xmin = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - half_width)));
    const int xmax = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(x0, x1) + half_width)));
    const int ymin = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - half_width)));
    const int ymax = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(y0, y1) + half_width)));
    const double dx = x1 - x0;
    const double dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = ymin; y <= ymax; ++y) {
        for (int x = xmin; x <= xmax; ++x) {
            double u = len2 > 0.0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
            u = std::clamp(u, 0.0, 1.0);
            const double px = x0 + u * dx - x;
            const double py = y0 + u * dy - y;
            if (px * px + py * py <= half_width * half_width) img.set(x, y, color);
        }
    }
}

void draw_disc(RgbImage& img, double cx, double cy, double radius, const Rgb& color) {
    draw_segment(img, cx, cy, cx, cy, radius, color);
}

}  // namespace

RgbImage render_pose(const Pose& pose, const SkeletonTopology& topology, int image_size, int grid_size) {
    if (image_size < 32) throw Error(ErrorCode::InvalidRenderSize, "image size must be at least 32");
    if (pose.size() != topology.keypoint_count())
        throw Error(ErrorCode::ShapeMismatch, "pose keypoint count differs from topology");
    RgbImage img(image_size, image_size);
    auto to_image = [&](Eigen::Index k) {
        return std::pair{grid_to_image(pose.xy(k, 0), image_size, grid_size),
                         grid_to_image(pose.xy(k, 1), image_size, grid_size)};
    };
    const double half_width = limb_thickness(image_size) / 2.0;
    for (std::size_t e = 0; e < topology.edges.size(); ++e) {
        auto [a, b] = topology.edges[e];
        if (!pose.visible(a) || !pose.visible(b)) continue;
        auto [xa, ya] = to_image(a);
        auto [xb, yb] = to_image(b);
        draw_segment(img, xa, ya, xb, yb, half_width, topology.limb_colors[e]);
    }
    const double radius = joint_radius(image_size);
    for (Eigen::Index k = 0; k < pose.size(); ++k) {
        if (!pose.visible(k)) continue;
        auto [x, y] = to_image(k);
        draw_disc(img, x, y, radius, topology.point_colors[static_cast<std::size_t>(k)]);
    }
    return img;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, "libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        auto* row = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace posediff
