#include <gtest/gtest.h>

#include <algorithm>

#include "sail/error.hpp"
#include "sail/probe.hpp"
#include "sail/synth.hpp"
#include "support/scratch.hpp"

using namespace sail;
using testing_support::ScratchDir;
using testing_support::slurp;

namespace {

synth::Options small() {
    synth::Options o;
    o.images = 6;
    o.train = 4;
    o.voxels = 8;
    o.prompts_per_category = 2;
    return o;
}

}  // namespace

TEST(Synth, FixtureIsDeterministic) {
    const synth::Fixture a = synth::build_fixture(small());
    const synth::Fixture b = synth::build_fixture(small());
    EXPECT_EQ(a.images, b.images);
    EXPECT_TRUE(a.betas == b.betas);
    EXPECT_TRUE(a.probe.weights == b.probe.weights);
    synth::Options other = small();
    other.seed = 8;
    EXPECT_FALSE(synth::build_fixture(other).images == a.images);
}

TEST(Synth, CleanBetasAreThePlantedProbeOnSummaries) {
    const synth::Fixture fx = synth::build_fixture(small());
    for (int i = 0; i < fx.options.images; ++i) {
        const Eigen::RowVectorXd b = predict(fx.probe, fx.summaries.row(i));
        EXPECT_LE((b - fx.betas_clean.row(i)).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_GT((fx.betas - fx.betas_clean).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Synth, RegionsPartitionTheVoxels) {
    const synth::Fixture fx = synth::build_fixture(small());
    ASSERT_EQ(fx.regions.size(), synth::kCategories.size());
    std::vector<int> seen;
    for (const auto& r : fx.regions) seen.insert(seen.end(), r.begin(), r.end());
    std::sort(seen.begin(), seen.end());
    for (int j = 0; j < fx.options.voxels; ++j) EXPECT_EQ(seen[static_cast<std::size_t>(j)], j);
}

TEST(Synth, LabelsAlignWithImages) {
    const synth::Fixture fx = synth::build_fixture(small());
    for (std::size_t i = 0; i < fx.images.size(); ++i) {
        EXPECT_EQ(fx.labels[i].height, fx.images[i].height());
        EXPECT_EQ(fx.labels[i].width, fx.images[i].width());
        EXPECT_EQ(fx.depth[i].rows(), fx.images[i].height() / fx.model.patch_size);
    }
}

TEST(Synth, NoiselessTrainSplitRecoversPlantedProbe) {
    const synth::Fixture fx = synth::build_fixture(synth::Options{});
    const int train = fx.options.train;
    const LinearProbe fit = fit_ridge(fx.summaries.topRows(train), fx.betas_clean.topRows(train), 0.0);
    EXPECT_LE((fit.weights - fx.probe.weights).norm() / fx.probe.weights.norm(), 1e-6);
}

TEST(Synth, BadOptionsRejected) {
    synth::Options o = small();
    o.voxels = 6;
    EXPECT_THROW(synth::build_fixture(o), InvalidArgument);
}

TEST(Synth, WrittenFixtureIsByteStable) {
    ScratchDir a, b;
    const synth::Fixture fx = synth::build_fixture(small());
    synth::write_fixture(fx, a.path());
    synth::write_fixture(synth::build_fixture(small()), b.path());
    for (const auto& name : {"manifest.txt", "betas.nst", "images/img_000.ppm", "model/manifest.txt"}) {
        EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
        EXPECT_FALSE(slurp(a / name).empty()) << name;
    }
}
