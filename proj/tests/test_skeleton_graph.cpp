#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <queue>

#include "posediff/dataset.hpp"
#include "posediff/errors.hpp"
#include "posediff/render.hpp"
#include "posediff/skeleton_graph.hpp"
#include "support.hpp"

using namespace posediff;
using posediff::testing::path_topology;

namespace {

int index_of(const SkeletonTopology& t, const std::string& name) {
    auto it = std::find(t.keypoint_names.begin(), t.keypoint_names.end(), name);
    return it == t.keypoint_names.end() ? -1 : static_cast<int>(it - t.keypoint_names.begin());
}

// Independent elementwise evaluation of D^-1/2 (A + I) D^-1/2.
Eigen::MatrixXd normalized_by_hand(const Eigen::MatrixXd& a) {
    const Eigen::Index n = a.rows();
    std::vector<double> degree(static_cast<std::size_t>(n), 1.0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) degree[static_cast<std::size_t>(i)] += a(i, j);
    Eigen::MatrixXd out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            out(i, j) = (a(i, j) + (i == j ? 1.0 : 0.0)) /
                        std::sqrt(degree[static_cast<std::size_t>(i)] * degree[static_cast<std::size_t>(j)]);
    return out;
}

}  // namespace

TEST(SkeletonTopology, DefaultHasSeventeenKeypointsAndNineteenLimbs) {
    const SkeletonTopology t = build_default_topology();
    EXPECT_EQ(t.keypoint_count(), 17);
    EXPECT_EQ(t.edges.size(), 19u);
    EXPECT_NO_THROW(t.validate());
    EXPECT_EQ(t.keypoint_names.front(), "nose");
}

TEST(SkeletonTopology, ShoulderElbowLimbPresent) {
    const SkeletonTopology t = build_default_topology();
    const int s = index_of(t, "left_shoulder");
    const int e = index_of(t, "left_elbow");
    ASSERT_GE(s, 0);
    ASSERT_GE(e, 0);
    const bool found = std::any_of(t.edges.begin(), t.edges.end(), [&](auto ed) {
        return (ed.first == s && ed.second == e) || (ed.first == e && ed.second == s);
    });
    EXPECT_TRUE(found);
}

TEST(SkeletonTopology, DefaultIsConnected) {
    const SkeletonTopology t = build_default_topology();
    EXPECT_EQ(connected_components(t), 1);
    // Separate BFS over the raw edge list.
    std::vector<bool> seen(17, false);
    std::queue<int> q;
    q.push(0);
    seen[0] = true;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (auto [a, b] : t.edges) {
            const int w = a == v ? b : (b == v ? a : -1);
            if (w >= 0 && !seen[static_cast<std::size_t>(w)]) {
                seen[static_cast<std::size_t>(w)] = true;
                q.push(w);
            }
        }
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
}

TEST(SkeletonTopology, InvalidEdgesRejected) {
    SkeletonTopology t = path_topology(3);
    t.edges.emplace_back(1, 1);
    t.limb_colors.push_back({1, 2, 3});
    try {
        t.validate();
        FAIL() << "self loop accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidTopology);
    }
    SkeletonTopology out_of_range = path_topology(3);
    out_of_range.edges[0] = {0, 7};
    EXPECT_THROW(out_of_range.validate(), Error);
    SkeletonTopology duplicate = path_topology(3);
    duplicate.edges.emplace_back(1, 0);
    duplicate.limb_colors.push_back({1, 2, 3});
    EXPECT_THROW(duplicate.validate(), Error);
}

TEST(SkeletonTopology, JsonRoundTrip) {
    const SkeletonTopology t = build_default_topology();
    const SkeletonTopology back = topology_from_json(topology_to_json(t));
    EXPECT_EQ(back.keypoint_names, t.keypoint_names);
    EXPECT_EQ(back.edges, t.edges);
    EXPECT_EQ(back.limb_colors, t.limb_colors);
}

TEST(Adjacency, PathGraph) {
    Eigen::MatrixXd expected(3, 3);
    expected << 0, 1, 0, 1, 0, 1, 0, 1, 0;
    EXPECT_EQ(adjacency(path_topology(3)), expected);
}

TEST(Adjacency, SingleNode) {
    const Eigen::MatrixXd a = adjacency(path_topology(1));
    ASSERT_EQ(a.rows(), 1);
    EXPECT_EQ(a(0, 0), 0.0);
}

TEST(Adjacency, RowSumIsDegree) {
    const SkeletonTopology t = build_default_topology();
    const Eigen::MatrixXd a = adjacency(t);
    for (int k = 0; k < 17; ++k) {
        const auto degree = std::count_if(t.edges.begin(), t.edges.end(),
                                          [k](auto e) { return e.first == k || e.second == k; });
        EXPECT_EQ(a.row(k).sum(), static_cast<double>(degree)) << t.keypoint_names[static_cast<std::size_t>(k)];
    }
    EXPECT_EQ(a, a.transpose());
    EXPECT_EQ(a.diagonal().sum(), 0.0);
}

TEST(NormalizeAdjacency, IsolatedNode) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(1, 1);
    EXPECT_EQ(normalize_adjacency(a)(0, 0), 1.0);
}

TEST(NormalizeAdjacency, PathGraphHandValues) {
    const Eigen::MatrixXd n = normalize_adjacency(adjacency(path_topology(3)));
    const double r6 = 1.0 / std::sqrt(6.0);
    Eigen::MatrixXd expected(3, 3);
    expected << 0.5, r6, 0, r6, 1.0 / 3.0, r6, 0, r6, 0.5;
    EXPECT_LT((n - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NormalizeAdjacency, MatchesElementwiseOracleOnCoco) {
    const Eigen::MatrixXd a = adjacency(build_default_topology());
    EXPECT_LT((normalize_adjacency(a) - normalized_by_hand(a)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NormalizeAdjacency, ExactlySymmetricForRandomGraphs) {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.3);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial;
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) a(i, j) = a(j, i) = coin(rng) ? 1.0 : 0.0;
        const Eigen::MatrixXd g = normalize_adjacency(a);
        EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0);
        const double radius = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().cwiseAbs().maxCoeff();
        EXPECT_LE(radius, 1.0 + 1e-9);
    }
}

TEST(Render, BlankForInvisiblePose) {
    const SkeletonTopology t = build_default_topology();
    const RgbImage img = render_pose(Pose(17), t, 64, 32);
    EXPECT_TRUE(std::all_of(img.pixels.begin(), img.pixels.end(), [](std::uint8_t v) { return v == 0; }));
}

TEST(Render, SingleVisibleKeypointDrawsOneDisc) {
    const SkeletonTopology t = build_default_topology();
    Pose p(17);
    p.xy.row(0) << 16, 16;
    p.visible(0) = true;
    const RgbImage img = render_pose(p, t, 64, 32);
    int lit = 0;
    double cx = 0, cy = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (img.at(x, y) != Rgb{0, 0, 0}) {
                EXPECT_EQ(img.at(x, y), t.point_colors[0]);
                ++lit;
                cx += x;
                cy += y;
            }
    ASSERT_GT(lit, 0);
    // All lit pixels form one disc around the keypoint.
    const double centre = grid_to_image(16, 64, 32);
    EXPECT_NEAR(cx / lit, centre, 0.5);
    EXPECT_NEAR(cy / lit, centre, 0.5);
    const double r = joint_radius(64);
    EXPECT_LE(lit, static_cast<int>(std::ceil(3.1416 * (r + 1) * (r + 1))));
}

TEST(Render, LimbsRequireBothEndpoints) {
    const SkeletonTopology t = path_topology(2);
    Pose p(2);
    p.xy << 4, 16, 28, 16;
    p.visible << true, false;
    RgbImage one = render_pose(p, t, 64, 32);
    p.visible << true, true;
    RgbImage both = render_pose(p, t, 64, 32);
    auto count = [&](const RgbImage& img, Rgb c) {
        int n = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) n += img.at(x, y) == c;
        return n;
    };
    EXPECT_EQ(count(one, t.limb_colors[0]), 0);
    EXPECT_GT(count(both, t.limb_colors[0]), 0);
}

TEST(Render, RejectsTinyCanvas) {
    try {
        render_pose(Pose(17), build_default_topology(), 16, 32);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidRenderSize);
    }
}

TEST(Render, PngWritten) {
    posediff::testing::TempDir dir("render");
    Pose p(17);
    for (int k = 0; k < 17; ++k) {
        p.xy.row(k) << 2 + k, 5 + k;
        p.visible(k) = true;
    }
    write_png(render_pose(p, build_default_topology(), 128, 32), dir / "pose.png");
    const std::string bytes = posediff::testing::slurp(dir / "pose.png");
    ASSERT_GT(bytes.size(), 8u);
    EXPECT_EQ(bytes.substr(1, 3), "PNG");
}

TEST(Render, TPoseDrawsEveryArmAndLegLimb) {
    const SkeletonTopology t = build_default_topology();
    const Pose p = builtin_templates(32).front().pose();
    const RgbImage img = render_pose(p, t, 256, 32);
    for (std::size_t e = 0; e < t.edges.size(); ++e) {
        const auto [a, b] = t.edges[e];
        if (a < 5 || b < 5) continue;  // face limbs are short and may hide under the joint discs
        int n = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) n += img.at(x, y) == t.limb_colors[e];
        EXPECT_GT(n, 0) << t.keypoint_names[static_cast<std::size_t>(a)] << "-"
                        << t.keypoint_names[static_cast<std::size_t>(b)];
    }
}
