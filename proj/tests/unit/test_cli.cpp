#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "cli.hpp"
#include "sail/config.hpp"
#include "sail/pipeline.hpp"
#include "sail/probe.hpp"
#include "support/pipeline_script.hpp"
#include "support/scratch.hpp"
#include "support/tree.hpp"

using namespace sail;
using testing_support::ScratchDir;
using testing_support::slurp;
using testing_support::spit;
using testing_support::tree_bytes;

namespace {

int sail_run(std::vector<std::string> args) { return cli::run(args); }

std::string s(const std::filesystem::path& p) { return p.string(); }

/// Small fixture shared by the tests below: written once per test.
std::filesystem::path small_fixture(const ScratchDir& dir) {
    EXPECT_EQ(sail_run({"synth", "--out", s(dir / "fx"), "--images", "6", "--train", "4", "--voxels", "8"}), 0);
    return dir / "fx";
}

}  // namespace

TEST(CliExitCodes, UsageErrors) {
    EXPECT_EQ(sail_run({}), cli::kUsage);
    EXPECT_EQ(sail_run({"frobnicate"}), cli::kUsage);
    EXPECT_EQ(sail_run({"extract", "--bogus"}), cli::kUsage);
    EXPECT_EQ(sail_run({"extract", "--images", "x"}), cli::kUsage);
    EXPECT_EQ(sail_run({"--help"}), cli::kOk);
}

TEST(CliExitCodes, InvalidValuesAreUsageErrors) {
    ScratchDir dir;
    const auto fx = small_fixture(dir);
    EXPECT_EQ(sail_run({"extract", "--model", s(fx / "model"), "--images", s(fx / "images"), "--out", s(dir / "o"),
                        "--mode", "bilinear"}),
              cli::kUsage);
    EXPECT_EQ(sail_run({"distill", "--model", s(fx / "model"), "--images", s(fx / "images"), "--out", s(dir / "o"),
                        "--n-aug", "0"}),
              cli::kUsage);
}

TEST(CliExitCodes, MissingInputs) {
    ScratchDir dir;
    const auto fx = small_fixture(dir);
    EXPECT_EQ(sail_run({"extract", "--model", s(dir / "nope"), "--images", s(fx / "images"), "--out", s(dir / "o")}),
              cli::kInput);
    EXPECT_EQ(sail_run({"extract", "--model", s(fx / "model"), "--images", s(dir / "nope"), "--out", s(dir / "o")}),
              cli::kInput);
    EXPECT_EQ(sail_run({"fit-encoder", "--features", s(dir / "nope"), "--betas", s(fx / "betas.nst"), "--out",
                        s(dir / "p")}),
              cli::kInput);
}

TEST(CliExitCodes, SingularFitIsNumeric) {
    ScratchDir dir;
    const auto fx = small_fixture(dir);
    ASSERT_EQ(sail_run({"extract", "--model", s(fx / "model"), "--images", s(fx / "images"), "--out", s(dir / "f")}), 0);
    // 4 training rows cannot determine 16 weights without a penalty.
    EXPECT_EQ(sail_run({"fit-encoder", "--features", s(dir / "f"), "--betas", s(fx / "betas.nst"), "--train", "4",
                        "--lambda", "0", "--out", s(dir / "p")}),
              cli::kNumeric);
}

TEST(CliSynth, TwoRunsAreByteIdentical) {
    ScratchDir dir;
    ASSERT_EQ(sail_run({"synth", "--out", s(dir / "a"), "--images", "8", "--train", "6"}), 0);
    ASSERT_EQ(sail_run({"synth", "--out", s(dir / "b"), "--images", "8", "--train", "6"}), 0);
    const auto a = tree_bytes(dir / "a");
    EXPECT_GT(a.size(), 20u);
    EXPECT_EQ(a, tree_bytes(dir / "b"));
}

TEST(CliDistill, SingleViewMatchesExtract) {
    ScratchDir dir;
    const auto fx = small_fixture(dir);
    ASSERT_EQ(sail_run({"extract", "--model", s(fx / "model"), "--images", s(fx / "images"), "--out", s(dir / "e")}), 0);
    ASSERT_EQ(sail_run({"distill", "--model", s(fx / "model"), "--images", s(fx / "images"), "--out", s(dir / "d"),
                        "--n-aug", "1"}),
              0);
    for (const auto& name : {"features.nst", "summary.nst", "valid.nst"}) {
        EXPECT_EQ(slurp(dir / "e" / name), slurp(dir / "d" / name)) << name;
    }
    EXPECT_EQ(load_features(dir / "d").meta.get("stage"), "distill");
}

TEST(CliFitEncoder, RecoversPlantedWeightsFromCleanResponses) {
    ScratchDir dir;
    ASSERT_EQ(sail_run({"synth", "--out", s(dir / "fx")}), 0);
    ASSERT_EQ(sail_run({"extract", "--model", s(dir / "fx/model"), "--images", s(dir / "fx/images"), "--out",
                        s(dir / "f")}),
              0);
    ASSERT_EQ(sail_run({"fit-encoder", "--features", s(dir / "f"), "--betas", s(dir / "fx/betas_clean.nst"), "--train",
                        "28", "--lambda", "0", "--out", s(dir / "p")}),
              0);
    const LinearProbe fit = load_probe(dir / "p");
    const LinearProbe truth = load_probe(dir / "fx/probe_true");
    EXPECT_LE((fit.weights - truth.weights).norm() / truth.weights.norm(), 1e-6);
    const Manifest m = Manifest::read(dir / "p" / "manifest.txt");
    EXPECT_EQ(m.get("train"), "28");
    EXPECT_EQ(m.get("test"), "4");
    EXPECT_TRUE(std::filesystem::exists(dir / "p" / "r2.csv"));
}

TEST(CliConfig, FileSuppliesDefaultsAndFlagsOverride) {
    ScratchDir dir;
    const auto fx = small_fixture(dir);
    spit(dir / "run.cfg", "# run\nmodel=" + s(fx / "model") + "\nsigma=5\nseed=11\n");
    ASSERT_EQ(sail_run({"extract", "--config", s(dir / "run.cfg"), "--images", s(fx / "images"), "--out", s(dir / "a")}),
              0);
    const Manifest a = load_features(dir / "a").meta;
    EXPECT_EQ(a.get("seed"), "11");
    EXPECT_EQ(std::stod(a.get("sigma")), 5.0);
    ASSERT_EQ(sail_run({"extract", "--config", s(dir / "run.cfg"), "--images", s(fx / "images"), "--out", s(dir / "b"),
                        "--sigma", "3"}),
              0);
    EXPECT_EQ(std::stod(load_features(dir / "b").meta.get("sigma")), 3.0);

    spit(dir / "bad.cfg", "model=" + s(fx / "model") + "\npatch_size=14\n");
    EXPECT_EQ(sail_run({"extract", "--config", s(dir / "bad.cfg"), "--images", s(fx / "images"), "--out", s(dir / "c")}),
              cli::kUsage);
}

TEST(CliPipeline, EveryStageWritesItsArtifacts) {
    ScratchDir dir;
    for (const auto& cmd : testing_support::pipeline_commands(dir.path().string())) {
        ASSERT_EQ(sail_run(cmd), 0) << cmd.front();
    }
    for (const auto& f : {"probe/r2.csv", "relevance/img_000.nst", "relevance/img_000.pgm", "assign/assignments.csv",
                          "assign/confusion.csv", "seg/metrics.csv", "correlate/correlations.csv",
                          "correlate/backbone_similarity.csv", "basis/voxel_colors.csv", "render/img_031.ppm"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    for (const auto& stage : {"raw", "distilled", "probe", "relevance", "assign", "seg", "correlate", "basis", "render"}) {
        EXPECT_TRUE(Manifest::read(dir / stage / "manifest.txt").contains("stage")) << stage;
    }
}
