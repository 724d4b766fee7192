#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "posediff/pose.hpp"
#include "posediff/skeleton_graph.hpp"

namespace posediff::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("posediff_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t file_hash(const std::filesystem::path& path) { return std::hash<std::string>{}(slurp(path)); }

// Path graph 0 - 1 - ... - (n-1).
inline SkeletonTopology path_topology(int n) {
    SkeletonTopology t;
    for (int i = 0; i < n; ++i) {
        t.keypoint_names.push_back("k" + std::to_string(i));
        t.point_colors.push_back({static_cast<std::uint8_t>(40 * i + 40), 0, 0});
    }
    for (int i = 0; i + 1 < n; ++i) {
        t.edges.emplace_back(i, i + 1);
        t.limb_colors.push_back({0, static_cast<std::uint8_t>(40 * i + 40), 0});
    }
    return t;
}

inline Pose random_pose(int k, int grid, std::mt19937_64& rng, bool integer) {
    std::uniform_real_distribution<double> u(0.0, grid - 1.0);
    std::uniform_int_distribution<int> ui(0, grid - 1);
    Pose p(k);
    for (int i = 0; i < k; ++i) {
        p.xy(i, 0) = integer ? ui(rng) : u(rng);
        p.xy(i, 1) = integer ? ui(rng) : u(rng);
        p.visible(i) = true;
    }
    return p;
}

inline int run_cli(const std::string& args, const std::filesystem::path& log = {}) {
    std::string cmd = std::string(POSEDIFF_CLI) + " " + args;
    cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace posediff::testing
