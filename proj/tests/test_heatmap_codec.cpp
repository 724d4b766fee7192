#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include "posediff/errors.hpp"
#include "posediff/heatmap_codec.hpp"
#include "support.hpp"

using namespace posediff;
using posediff::testing::random_pose;
using posediff::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::IoError;
}

}  // namespace

TEST(Encode, PeakAndNeighbourValues) {
    Pose p(17);
    p.xy.row(0) << 32, 32;
    p.visible(0) = true;
    const HeatmapStack h = encode_pose(p, 64, 2.0);
    EXPECT_EQ(h.at(0, 32, 32), 1.0f);
    EXPECT_NEAR(h.at(0, 32, 34), std::exp(-0.5), 1e-6);
    EXPECT_NEAR(h.at(0, 34, 32), std::exp(-0.5), 1e-6);
}

TEST(Encode, MatchesGaussianEverywhere) {
    std::mt19937_64 rng(11);
    const Pose p = random_pose(5, 32, rng, false);
    const double sigma = 1.3;
    const HeatmapStack h = encode_pose(p, 32, sigma);
    double worst = 0;
    for (int k = 0; k < 5; ++k)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double dx = x - p.xy(k, 0), dy = y - p.xy(k, 1);
                worst = std::max(worst, std::abs(h.at(k, y, x) - std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))));
            }
    EXPECT_LT(worst, 1e-6);
}

TEST(Encode, InvisibleKeypointIsZeroMap) {
    Pose p(3);
    p.xy << 5, 5, 7, 7, 9, 9;
    p.visible << true, false, true;
    const HeatmapStack h = encode_pose(p, 16, 1.0);
    EXPECT_EQ(h.columns().col(1).cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_GT(h.columns().col(0).maxCoeff(), 0.0f);
}

TEST(Encode, Errors) {
    Pose p(1);
    p.visible(0) = true;
    EXPECT_EQ(code_of([&] { encode_pose(p, 4, 1.0); }), ErrorCode::GridTooSmall);
    EXPECT_EQ(code_of([&] { encode_pose(p, 16, 0.0); }), ErrorCode::InvalidSigma);
    p.xy(0, 0) = 40;
    EXPECT_EQ(code_of([&] { encode_pose(p, 16, 1.0); }), ErrorCode::ShapeMismatch);
}

TEST(Decode, UniquePeak) {
    HeatmapStack h(1, 32, 1.0f);
    h.columns()(20 * 32 + 10, 0) = 0.9f;
    const Pose p = decode_heatmaps(h, 0.2);
    EXPECT_EQ(p.xy(0, 0), 10);
    EXPECT_EQ(p.xy(0, 1), 20);
    EXPECT_TRUE(p.visible(0));
}

TEST(Decode, ZeroMapInvisible) {
    const Pose p = decode_heatmaps(HeatmapStack(2, 16, 1.0f), 0.2);
    EXPECT_FALSE(p.visible(0));
    EXPECT_FALSE(p.visible(1));
}

TEST(Decode, TiesBreakToFirstRowMajorIndex) {
    HeatmapStack h(1, 8, 1.0f);
    h.columns()(3 * 8 + 5, 0) = 0.5f;
    h.columns()(6 * 8 + 1, 0) = 0.5f;
    const Pose p = decode_heatmaps(h, 0.2);
    EXPECT_EQ(p.xy(0, 0), 5);
    EXPECT_EQ(p.xy(0, 1), 3);
}

TEST(Decode, NonFiniteRejected) {
    HeatmapStack h(1, 8, 1.0f);
    h.values[3] = std::nanf("");
    EXPECT_EQ(code_of([&] { decode_heatmaps(h); }), ErrorCode::NonFiniteHeatmap);
}

TEST(Codec, IntegerRoundTripIsExact) {
    std::mt19937_64 rng(5);
    std::bernoulli_distribution hide(0.2);
    for (int i = 0; i < 300; ++i) {
        Pose p = random_pose(17, 64, rng, true);
        for (int k = 0; k < 17; ++k)
            if (hide(rng)) {
                p.visible(k) = false;
                p.xy.row(k).setZero();
            }
        EXPECT_EQ(decode_heatmaps(encode_pose(p, 64, 2.0)), p);
    }
}

TEST(Codec, FractionalRoundTripWithinHalfDiagonal) {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 200; ++i) {
        const Pose p = random_pose(17, 64, rng, false);
        const Pose q = decode_heatmaps(encode_pose(p, 64, 2.0));
        EXPECT_LE((p.xy - q.xy).rowwise().norm().maxCoeff(), 0.71);
        EXPECT_TRUE(q.visible.all());
    }
}

TEST(HeatmapFile, RoundTripIsLossless) {
    TempDir dir("pdhm");
    std::mt19937_64 rng(2);
    HeatmapStack h(17, 32, 1.5f);
    std::normal_distribution<float> n;
    for (Eigen::Index i = 0; i < h.values.size(); ++i) h.values[i] = n(rng);
    write_heatmap_file(h, dir / "h.pdhm");
    const HeatmapStack back = read_heatmap_file(dir / "h.pdhm");
    EXPECT_EQ(back.keypoints, 17);
    EXPECT_EQ(back.grid_size, 32);
    EXPECT_EQ(back.sigma, 1.5f);
    EXPECT_EQ(back.values, h.values);
}

TEST(HeatmapFile, LayoutIsLittleEndianHeaderThenFloats) {
    TempDir dir("pdhm_layout");
    HeatmapStack h(2, 8, 1.0f);
    h.values[1] = 0.25f;
    write_heatmap_file(h, dir / "h.pdhm");
    const std::string b = posediff::testing::slurp(dir / "h.pdhm");
    ASSERT_EQ(b.size(), 4u + 4 * 4 + 2 * 64 * 4);
    EXPECT_EQ(b.substr(0, 4), "PDHM");
    EXPECT_EQ(static_cast<unsigned char>(b[8]), 2);
    EXPECT_EQ(static_cast<unsigned char>(b[12]), 8);
    float second;
    std::memcpy(&second, b.data() + 20 + 4, 4);
    EXPECT_EQ(second, 0.25f);
}

TEST(HeatmapFile, WrongMagic) {
    TempDir dir("pdhm_magic");
    std::ofstream(dir / "bad.pdhm") << "NOPE and some more bytes to pass the header";
    EXPECT_EQ(code_of([&] { read_heatmap_file(dir / "bad.pdhm"); }), ErrorCode::UnsupportedFormat);
}

TEST(HeatmapFile, TruncatedPayload) {
    TempDir dir("pdhm_trunc");
    write_heatmap_file(HeatmapStack(17, 64, 2.0f), dir / "h.pdhm");
    std::string bytes = posediff::testing::slurp(dir / "h.pdhm");
    bytes.resize(bytes.size() - 100);
    std::ofstream(dir / "h.pdhm", std::ios::binary | std::ios::trunc) << bytes;
    EXPECT_EQ(code_of([&] { read_heatmap_file(dir / "h.pdhm"); }), ErrorCode::CorruptFile);
}

TEST(PoseJson, RoundTrip) {
    TempDir dir("posejson");
    std::mt19937_64 rng(9);
    Pose p = random_pose(17, 64, rng, false);
    p.visible(3) = false;
    p.xy.row(3).setZero();
    write_pose_file(p, dir / "p.json");
    EXPECT_EQ(read_pose_file(dir / "p.json"), p);
}
