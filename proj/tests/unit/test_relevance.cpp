#include <gtest/gtest.h>

#include <algorithm>

#include "sail/error.hpp"
#include "sail/metrics.hpp"
#include "sail/relevance.hpp"
#include "sail/rng.hpp"
#include "support/scratch.hpp"

using namespace sail;
using testing_support::ScratchDir;

namespace {

Eigen::RowVectorXd unit(Rng& rng, int m) {
    Eigen::RowVectorXd v(m);
    for (int i = 0; i < m; ++i) v(i) = rng.normal();
    return v.normalized();
}

DenseFeatureMap random_features(Rng& rng, int gh, int gw, int m) {
    DenseFeatureMap f;
    f.grid_h = gh;
    f.grid_w = gw;
    f.patches.resize(gh * gw, m);
    for (int p = 0; p < gh * gw; ++p) f.patches.row(p) = unit(rng, m).cast<float>();
    f.summary = unit(rng, m).cast<float>();
    f.valid.assign(static_cast<std::size_t>(gh * gw), 1);
    return f;
}

LinearProbe random_probe(Rng& rng, int m, int n) {
    LinearProbe p{RowMatrixXd(m, n), Eigen::RowVectorXd(n)};
    for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = rng.normal();
    for (int j = 0; j < n; ++j) p.bias(j) = rng.normal();
    return p;
}

Eigen::Index argmax(const RowMatrixXd& m) {
    Eigen::Index r = 0, c = 0;
    m.maxCoeff(&r, &c);
    return r * m.cols() + c;
}

QuerySet two_groups(Rng& rng, int m) {
    QuerySet q;
    q.groups.push_back({"a", {unit(rng, m), unit(rng, m)}});
    q.groups.push_back({"b", {unit(rng, m)}});
    return q;
}

}  // namespace

TEST(VoxelRelevance, SingleVoxelPeaksAtPlantedPatch) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const DenseFeatureMap f = random_features(rng, 4, 4, 16);
        const int target = rng.uniform_int(0, 15);
        LinearProbe p = random_probe(rng, 16, 3);
        p.weights.col(1) = f.patches.row(target).cast<double>().transpose();
        const std::vector<int> v{1};
        EXPECT_EQ(argmax(voxel_relevance(f, p, v).values), target);
    }
}

TEST(VoxelRelevance, ZeroWeightsGiveMeanBias) {
    Rng rng(2);
    const DenseFeatureMap f = random_features(rng, 2, 3, 5);
    LinearProbe p{RowMatrixXd::Zero(5, 4), Eigen::RowVectorXd(4)};
    p.bias << 1, 2, 3, 10;
    const std::vector<int> v{0, 1, 2};
    const RelevanceMap m = voxel_relevance(f, p, v);
    EXPECT_TRUE((m.values.array() == 2.0).all());
    VoxelRelevanceOptions no_bias;
    no_bias.include_bias = false;
    EXPECT_TRUE((voxel_relevance(f, p, v, no_bias).values.array() == 0.0).all());
}

TEST(VoxelRelevance, MeanAndMaxAggregation) {
    Rng rng(3);
    const DenseFeatureMap f = random_features(rng, 3, 3, 6);
    const LinearProbe p = random_probe(rng, 6, 4);
    const std::vector<int> a{0}, b{2}, ab{0, 2};
    const RelevanceMap ma = voxel_relevance(f, p, a);
    const RelevanceMap mb = voxel_relevance(f, p, b);
    const RelevanceMap mean = voxel_relevance(f, p, ab);
    EXPECT_LE((mean.values - 0.5 * (ma.values + mb.values)).cwiseAbs().maxCoeff(), 1e-12);
    VoxelRelevanceOptions opts;
    opts.agg = Aggregation::max;
    const RelevanceMap mx = voxel_relevance(f, p, ab, opts);
    EXPECT_TRUE(mx.values == ma.values.cwiseMax(mb.values));
}

TEST(VoxelRelevance, BadVoxelSets) {
    Rng rng(4);
    const DenseFeatureMap f = random_features(rng, 2, 2, 4);
    const LinearProbe p = random_probe(rng, 4, 2);
    EXPECT_THROW(voxel_relevance(f, p, std::vector<int>{}), InvalidArgument);
    EXPECT_THROW(voxel_relevance(f, p, std::vector<int>{2}), InvalidArgument);
    EXPECT_THROW(voxel_relevance(f, p, std::vector<int>{-1}), InvalidArgument);
    EXPECT_THROW(voxel_relevance(f, random_probe(rng, 5, 2), std::vector<int>{0}), InvalidArgument);
}

TEST(VoxelRelevance, PositiveScalingKeepsRanking) {
    Rng rng(5);
    const DenseFeatureMap f = random_features(rng, 4, 4, 8);
    LinearProbe p = random_probe(rng, 8, 2);
    VoxelRelevanceOptions opts;
    opts.include_bias = false;
    const std::vector<int> v{0, 1};
    const RelevanceMap base = voxel_relevance(f, p, v, opts);
    p.weights *= 3.5;
    const RelevanceMap scaled = voxel_relevance(f, p, v, opts);
    EXPECT_LE((scaled.values - 3.5 * base.values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(argmax(scaled.values), argmax(base.values));
}

TEST(VoxelRelevance, InvalidCellsStayUntouched) {
    Rng rng(6);
    DenseFeatureMap f = random_features(rng, 2, 2, 4);
    f.valid[3] = 0;
    const RelevanceMap m = voxel_relevance(f, random_probe(rng, 4, 1), std::vector<int>{0});
    EXPECT_EQ(m.valid, f.valid);
    EXPECT_EQ(m.values(1, 1), 0.0);
    EXPECT_EQ(m.valid_values().size(), 3u);
}

TEST(QueryRelevance, CosineRange) {
    Rng rng(7);
    const DenseFeatureMap f = random_features(rng, 3, 3, 6);
    const RelevanceMap self = query_relevance(f, 4.0 * f.patches.row(4).cast<double>());
    EXPECT_NEAR(self.values(1, 1), 1.0, 1e-6);
    EXPECT_LE(self.values.maxCoeff(), 1.0);
    EXPECT_GE(self.values.minCoeff(), -1.0);
    EXPECT_THROW(query_relevance(f, Eigen::RowVectorXd::Zero(6)), InvalidArgument);
    EXPECT_THROW(query_relevance(f, Eigen::RowVectorXd::Ones(5)), InvalidArgument);
}

TEST(QueryRelevance, OrthogonalQueryIsZero) {
    DenseFeatureMap f;
    f.grid_h = 1;
    f.grid_w = 2;
    f.patches.resize(2, 3);
    f.patches << 1, 0, 0, 0, 1, 0;
    f.valid.assign(2, 1);
    const RelevanceMap m = query_relevance(f, Eigen::RowVector3d(0, 0, 1));
    EXPECT_EQ(m.values(0, 0), 0.0);
    EXPECT_EQ(m.values(0, 1), 0.0);
}

TEST(AssignCategory, PromptEqualToBrainMapWins) {
    Rng rng(8);
    const DenseFeatureMap f = random_features(rng, 4, 4, 8);
    const QuerySet q = two_groups(rng, 8);
    for (std::size_t g = 0; g < q.groups.size(); ++g) {
        for (std::size_t p = 0; p < q.groups[g].prompts.size(); ++p) {
            const RelevanceMap brain = query_relevance(f, q.groups[g].prompts[p]);
            const CategoryAssignment a = assign_category(brain, q, f);
            EXPECT_EQ(a.group, g);
            EXPECT_EQ(a.prompt, p);
            EXPECT_NEAR(a.r, 1.0, 1e-12);
        }
    }
}

TEST(AssignCategory, InvariantToPositiveAffineBrainMaps) {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const DenseFeatureMap f = random_features(rng, 4, 4, 8);
        const QuerySet q = two_groups(rng, 8);
        RelevanceMap brain = voxel_relevance(f, random_probe(rng, 8, 1), std::vector<int>{0});
        const CategoryAssignment a = assign_category(brain, q, f);
        brain.values = (2.5 * brain.values.array() - 7.0).matrix();
        const CategoryAssignment b = assign_category(brain, q, f);
        EXPECT_EQ(a.group, b.group);
        EXPECT_EQ(a.prompt, b.prompt);
        EXPECT_NEAR(a.r, b.r, 1e-12);
    }
}

TEST(AssignCategory, NegatedPromptLoses) {
    Rng rng(10);
    const DenseFeatureMap f = random_features(rng, 4, 4, 8);
    const Eigen::RowVectorXd q0 = unit(rng, 8);
    QuerySet q;
    q.groups.push_back({"neg", {-q0}});
    q.groups.push_back({"pos", {q0}});
    const CategoryAssignment a = assign_category(query_relevance(f, q0), q, f);
    EXPECT_EQ(a.group, 1u);
}

TEST(AssignCategory, TiesGoToEarlierGroup) {
    Rng rng(11);
    const DenseFeatureMap f = random_features(rng, 3, 3, 5);
    const Eigen::RowVectorXd q0 = unit(rng, 5);
    QuerySet q;
    q.groups.push_back({"first", {q0}});
    q.groups.push_back({"second", {q0}});
    EXPECT_EQ(assign_category(query_relevance(f, q0), q, f).group, 0u);
}

TEST(AssignCategory, ConstantBrainMapIsNumericError) {
    Rng rng(12);
    const DenseFeatureMap f = random_features(rng, 2, 2, 4);
    RelevanceMap brain = query_relevance(f, unit(rng, 4));
    brain.values.setConstant(0.3);
    EXPECT_THROW(assign_category(brain, two_groups(rng, 4), f), NumericError);
}

TEST(AssignCategory, GroupOrderOnlyRelabels) {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const DenseFeatureMap f = random_features(rng, 4, 4, 8);
        const QuerySet q = two_groups(rng, 8);
        QuerySet rev;
        rev.groups.assign(q.groups.rbegin(), q.groups.rend());
        const RelevanceMap brain = voxel_relevance(f, random_probe(rng, 8, 1), std::vector<int>{0});
        const CategoryAssignment a = assign_category(brain, q, f);
        const CategoryAssignment b = assign_category(brain, rev, f);
        EXPECT_EQ(q.groups[a.group].name, rev.groups[b.group].name);
        EXPECT_DOUBLE_EQ(a.r, b.r);
    }
}

TEST(IndexSet, ParseAndFormat) {
    EXPECT_EQ(parse_index_set("0-3,7,9-10"), (std::vector<int>{0, 1, 2, 3, 7, 9, 10}));
    EXPECT_EQ(format_index_set(std::vector<int>{0, 1, 2, 3, 7, 9, 10}), "0-3,7,9-10");
    EXPECT_EQ(parse_index_set("5"), (std::vector<int>{5}));
    EXPECT_THROW(parse_index_set(""), InvalidArgument);
    EXPECT_THROW(parse_index_set("3-1"), InvalidArgument);
    EXPECT_THROW(parse_index_set("a"), InvalidArgument);
    EXPECT_THROW(parse_index_set("-2"), InvalidArgument);
}

TEST(IndexSet, Aggregation) {
    EXPECT_EQ(parse_aggregation("max"), Aggregation::max);
    EXPECT_THROW(parse_aggregation("median"), InvalidArgument);
}

TEST(QuerySet, ValidateAndClassEmbeddings) {
    QuerySet q;
    q.groups.push_back({"x", {Eigen::RowVector2d(1, 0), Eigen::RowVector2d(0, 1)}});
    q.validate();
    const auto c = q.class_embeddings();
    EXPECT_NEAR(c[0](0), std::sqrt(0.5), 1e-15);
    EXPECT_NEAR(c[0](1), std::sqrt(0.5), 1e-15);

    QuerySet dup = q;
    dup.groups.push_back(q.groups[0]);
    EXPECT_THROW(dup.validate(), InvalidArgument);
    QuerySet bad = q;
    bad.groups[0].prompts[0] *= 2.0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
    QuerySet empty;
    EXPECT_THROW(empty.validate(), InvalidArgument);
}

TEST(QuerySet, SaveLoadRoundTrip) {
    ScratchDir dir;
    Rng rng(14);
    const QuerySet q = two_groups(rng, 6);
    save_query_set(q, dir / "q");
    const QuerySet back = load_query_set(dir / "q" / "manifest.txt");
    ASSERT_EQ(back.groups.size(), 2u);
    EXPECT_EQ(back.groups[0].name, "a");
    EXPECT_EQ(back.groups[0].prompts.size(), 2u);
    EXPECT_LE((back.groups[1].prompts[0] - q.groups[1].prompts[0]).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_THROW(load_query_set(dir / "nothing.txt"), InputError);
}
