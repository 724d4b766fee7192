#include "posediff/heatmap_codec.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace posediff {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'D', 'H', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

bool pose_within_grid(const Pose& pose, int grid_size) {
    for (Eigen::Index k = 0; k < pose.size(); ++k) {
        if (!pose.visible(k)) continue;
        const double x = pose.xy(k, 0), y = pose.xy(k, 1);
        if (!(x >= 0.0 && x < grid_size && y >= 0.0 && y < grid_size)) return false;
    }
    return true;
}

HeatmapStack encode_pose(const Pose& pose, int grid_size, double sigma) {
    if (grid_size < 8) throw Error(ErrorCode::GridTooSmall, "grid size must be at least 8");
    if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidSigma, "sigma must be positive");
    if (!pose_within_grid(pose, grid_size))
        throw Error(ErrorCode::ShapeMismatch, "visible keypoint outside the heatmap grid");

    const int k_count = static_cast<int>(pose.size());
    HeatmapStack stack(k_count, grid_size, static_cast<float>(sigma));
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    Eigen::ArrayXd gx(grid_size), gy(grid_size);
    for (int k = 0; k < k_count; ++k) {
        if (!pose.visible(k)) continue;
        // The Gaussian factorises into a row term and a column term.
        for (int i = 0; i < grid_size; ++i) {
            const double dx = i - pose.xy(k, 0);
            const double dy = i - pose.xy(k, 1);
            gx[i] = dx * dx;
            gy[i] = dy * dy;
        }
        for (int y = 0; y < grid_size; ++y) {
            for (int x = 0; x < grid_size; ++x) {
                stack.values[(static_cast<Eigen::Index>(k) * grid_size + y) * grid_size + x] =
                    static_cast<float>(std::exp(-(gx[x] + gy[y]) * inv_two_sigma2));
            }
        }
    }
    return stack;
}

void write_heatmap_file(const HeatmapStack& stack, const std::filesystem::path& path) {
    if (!stack.values.allFinite()) throw Error(ErrorCode::NonFiniteHeatmap, "refusing to write non-finite stack");
    std::vector<std::uint8_t> bytes(kMagic.begin(), kMagic.end());
    put_u32(bytes, kVersion);
    put_u32(bytes, static_cast<std::uint32_t>(stack.keypoints));
    put_u32(bytes, static_cast<std::uint32_t>(stack.grid_size));
    put_u32(bytes, std::bit_cast<std::uint32_t>(stack.sigma));
    bytes.reserve(bytes.size() + static_cast<std::size_t>(stack.values.size()) * 4);
    for (float v : stack.values) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

HeatmapStack read_heatmap_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    constexpr std::size_t header = 4 + 4 * 4;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
        throw Error(ErrorCode::UnsupportedFormat, "bad magic in " + path.string());
    if (bytes.size() < header) throw Error(ErrorCode::CorruptFile, "truncated header in " + path.string());
    if (get_u32(bytes.data() + 4) != kVersion)
        throw Error(ErrorCode::UnsupportedFormat, "unsupported heatmap file version");
    const std::uint32_t k = get_u32(bytes.data() + 8);
    const std::uint32_t s = get_u32(bytes.data() + 12);
    const float sigma = std::bit_cast<float>(get_u32(bytes.data() + 16));
    const std::uint64_t count = static_cast<std::uint64_t>(k) * s * s;
    if (bytes.size() != header + count * 4)
        throw Error(ErrorCode::CorruptFile, "payload size does not match K and S in " + path.string());
    HeatmapStack stack(static_cast<int>(k), static_cast<int>(s), sigma);
    for (std::uint64_t i = 0; i < count; ++i)
        stack.values[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(get_u32(bytes.data() + header + 4 * i));
    return stack;
}

nlohmann::json pose_to_json(const Pose& pose) {
    nlohmann::json kps = nlohmann::json::array();
    for (Eigen::Index k = 0; k < pose.size(); ++k) {
        if (pose.visible(k))
            kps.push_back({pose.xy(k, 0), pose.xy(k, 1), 1});
        else
            kps.push_back({0.0, 0.0, 0});
    }
    return nlohmann::json{{"keypoints", kps}};
}

Pose pose_from_json(const nlohmann::json& j) {
    try {
        const auto& kps = j.at("keypoints");
        Pose pose(static_cast<Eigen::Index>(kps.size()));
        for (std::size_t k = 0; k < kps.size(); ++k) {
            const auto& e = kps[k];
            if (e.size() != 3) throw Error(ErrorCode::ParseError, "keypoint entries must be [x, y, v]");
            pose.xy(static_cast<Eigen::Index>(k), 0) = e[0].get<double>();
            pose.xy(static_cast<Eigen::Index>(k), 1) = e[1].get<double>();
            pose.visible(static_cast<Eigen::Index>(k)) = e[2].get<double>() > 0.0;
        }
        return pose;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
}

Pose read_pose_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    return pose_from_json(j);
}

void write_pose_file(const Pose& pose, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    out << pose_to_json(pose).dump() << '\n';
}

}  // namespace posediff
