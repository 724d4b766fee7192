#include "posediff/skeleton_graph.hpp"

#include <algorithm>
#include <queue>
#include <set>

namespace posediff {

namespace {

const std::vector<std::string> kCocoNames = {
    "nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
    "right_wrist",   "left_hip",       "right_hip",  "left_knee",   "right_knee",
    "left_ankle",    "right_ankle"};

// Legs, hip bar, torso sides, shoulder girdle, arms, face chain, ear-shoulder links.
const std::vector<std::pair<int, int>> kCocoEdges = {
    {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
    {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},  {1, 2},  {0, 1},
    {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6}};

}  // namespace

const std::vector<Rgb>& openpose_palette() {
    static const std::vector<Rgb> palette = {
        {255, 0, 0},   {255, 85, 0},  {255, 170, 0}, {255, 255, 0}, {170, 255, 0},
        {85, 255, 0},  {0, 255, 0},   {0, 255, 85},  {0, 255, 170}, {0, 255, 255},
        {0, 170, 255}, {0, 85, 255},  {0, 0, 255},   {85, 0, 255},  {170, 0, 255},
        {255, 0, 255}, {255, 0, 170}, {255, 0, 85},  {170, 170, 170}};
    return palette;
}

void SkeletonTopology::validate() const {
    const int k = keypoint_count();
    if (k < 1) throw Error(ErrorCode::InvalidTopology, "topology has no keypoints");
    std::set<std::pair<int, int>> seen;
    for (auto [i, j] : edges) {
        if (i < 0 || j < 0 || i >= k || j >= k)
            throw Error(ErrorCode::InvalidTopology, "edge index out of range");
        if (i == j) throw Error(ErrorCode::InvalidTopology, "self-loop edge");
        if (!seen.insert({std::min(i, j), std::max(i, j)}).second)
            throw Error(ErrorCode::InvalidTopology, "duplicate edge");
    }
    if (limb_colors.size() != edges.size())
        throw Error(ErrorCode::InvalidTopology, "limb colour count differs from edge count");
    if (point_colors.size() != keypoint_names.size())
        throw Error(ErrorCode::InvalidTopology, "point colour count differs from keypoint count");
}

SkeletonTopology build_default_topology() {
    SkeletonTopology topo;
    topo.keypoint_names = kCocoNames;
    topo.edges = kCocoEdges;
    const auto& palette = openpose_palette();
    topo.limb_colors.assign(palette.begin(), palette.begin() + kCocoEdges.size());
    topo.point_colors.assign(palette.begin(), palette.begin() + kCocoNames.size());
    return topo;
}

Eigen::MatrixXd adjacency(const SkeletonTopology& topology) {
    const int k = topology.keypoint_count();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
    for (auto [i, j] : topology.edges) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
    }
    return a;
}

int connected_components(const SkeletonTopology& topology) {
    const int k = topology.keypoint_count();
    std::vector<std::vector<int>> neighbours(k);
    for (auto [i, j] : topology.edges) {
        neighbours[i].push_back(j);
        neighbours[j].push_back(i);
    }
    std::vector<bool> seen(k, false);
    int components = 0;
    for (int start = 0; start < k; ++start) {
        if (seen[start]) continue;
        ++components;
        std::queue<int> frontier;
        frontier.push(start);
        seen[start] = true;
        while (!frontier.empty()) {
            int node = frontier.front();
            frontier.pop();
            for (int next : neighbours[node]) {
                if (!seen[next]) {
                    seen[next] = true;
                    frontier.push(next);
                }
            }
        }
    }
    return components;
}

nlohmann::json topology_to_json(const SkeletonTopology& topology) {
    nlohmann::json j;
    j["keypoints"] = topology.keypoint_names;
    j["edges"] = nlohmann::json::array();
    for (auto [a, b] : topology.edges) j["edges"].push_back({a, b});
    j["limb_colors"] = nlohmann::json::array();
    for (const auto& c : topology.limb_colors) j["limb_colors"].push_back({c[0], c[1], c[2]});
    return j;
}

SkeletonTopology topology_from_json(const nlohmann::json& j) {
    SkeletonTopology topo;
    try {
        topo.keypoint_names = j.at("keypoints").get<std::vector<std::string>>();
        for (const auto& e : j.at("edges")) topo.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
        for (const auto& c : j.at("limb_colors"))
            topo.limb_colors.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(),
                                        c.at(2).get<std::uint8_t>()});
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    const auto& palette = openpose_palette();
    for (int i = 0; i < topo.keypoint_count(); ++i)
        topo.point_colors.push_back(palette[static_cast<std::size_t>(i) % palette.size()]);
    topo.validate();
    return topo;
}

}  // namespace posediff
