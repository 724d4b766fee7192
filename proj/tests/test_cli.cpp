#include <gtest/gtest.h>

#include "posediff/heatmap_codec.hpp"
#include "support.hpp"

using posediff::testing::TempDir;
using posediff::testing::file_hash;
using posediff::testing::run_cli;
using posediff::testing::slurp;

TEST(Cli, ExitCodes) {
    TempDir dir("cli_codes");
    EXPECT_EQ(run_cli("inspect-schedule --T 5"), 0);
    EXPECT_EQ(run_cli("no-such-command"), 1);
    EXPECT_EQ(run_cli("encode --pose"), 1);
    EXPECT_EQ(run_cli("decode --heatmaps " + (dir / "missing.pdhm").string() + " --out " + (dir / "x.json").string(),
                      dir / "log.txt"),
              2);
    EXPECT_EQ(run_cli("inspect-schedule --T 0", dir / "log2.txt"), 2);
    EXPECT_NE(slurp(dir / "log2.txt").find("InvalidSchedule"), std::string::npos);
}

TEST(Cli, InspectScheduleSingleStep) {
    TempDir dir("cli_sched");
    ASSERT_EQ(run_cli("inspect-schedule --T 1 --beta-start 0.5 --beta-end 0.5 --out " + (dir / "s.csv").string()), 0);
    EXPECT_EQ(slurp(dir / "s.csv"), "t,beta,alpha,alpha_bar\n1,0.5,0.5,0.5\n");
}

TEST(Cli, EncodeDecodeRoundTrip) {
    TempDir dir("cli_codec");
    std::mt19937_64 rng(9);
    posediff::Pose p = posediff::testing::random_pose(17, 64, rng, true);
    p.visible(4) = false;
    p.xy.row(4).setZero();
    posediff::write_pose_file(p, dir / "in.json");
    ASSERT_EQ(run_cli("encode --pose " + (dir / "in.json").string() + " --out " + (dir / "h.pdhm").string()), 0);
    ASSERT_EQ(run_cli("decode --heatmaps " + (dir / "h.pdhm").string() + " --out " + (dir / "out.json").string()), 0);
    EXPECT_EQ(slurp(dir / "in.json"), slurp(dir / "out.json"));
    const posediff::HeatmapStack h = posediff::read_heatmap_file(dir / "h.pdhm");
    EXPECT_EQ(h.grid_size, 64);
    EXPECT_FLOAT_EQ(h.sigma, 2.0f);
}

TEST(Cli, SeededSamplingIsReproducible) {
    TempDir dir("cli_sample");
    const std::string m = (dir / "m.jsonl").string();
    ASSERT_EQ(run_cli("synth-data --count 2 --seed 1 --out " + m), 0);
    ASSERT_EQ(run_cli("train --manifest " + m + " --out-dir " + (dir / "run").string() +
                      " --steps 3 --batch-size 1 --seed 2"),
              0);
    const std::string ckpt = (dir / "run" / "checkpoint.pdck").string();
    for (const char* out : {"a", "b"})
        ASSERT_EQ(run_cli("sample --checkpoint " + ckpt + " --caption \"a person standing\" --count 3 --seed 7 --size 64 --out-dir " +
                          (dir / out).string()),
                  0);
    for (const char* f : {"sample_000.pdhm", "sample_001.json", "sample_002.png"}) {
        ASSERT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
        EXPECT_EQ(file_hash(dir / "a" / f), file_hash(dir / "b" / f)) << f;
    }
    EXPECT_EQ(run_cli("sample --checkpoint " + ckpt + " --caption x --count 0 --out-dir " + (dir / "c").string()), 1);
}
