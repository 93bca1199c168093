#include <gtest/gtest.h>

#include <cmath>

#include "sail/error.hpp"
#include "sail/rng.hpp"
#include "sail/synth.hpp"
#include "sail/vit.hpp"
#include "support/scratch.hpp"

using namespace sail;
using testing_support::ScratchDir;

namespace {

RowMatrixXf zeros(int r, int c) { return RowMatrixXf::Zero(r, c); }
Eigen::RowVectorXf zvec(int n) { return Eigen::RowVectorXf::Zero(n); }
Eigen::RowVectorXf ones(int n) { return Eigen::RowVectorXf::Ones(n); }

/// P=2, D=4, M=4, native grid 1x2. Patch projection averages each colour
/// channel into dims 0..2; attention and MLP weights are zero, so every token
/// leaves the network as LN(embedding + position).
ViTModel identity_like_model(int registers) {
    Rng rng(3);
    ViTModel m;
    m.patch_size = 2;
    m.embed_dim = 4;
    m.heads = 2;
    m.registers = registers;
    m.out_dim = 4;
    m.grid_h = 1;
    m.grid_w = 2;
    m.patch_w = zeros(12, 4);
    for (int px = 0; px < 4; ++px)
        for (int c = 0; c < 3; ++c) m.patch_w(px * 3 + c, c) = 0.25f;
    m.patch_b = zvec(4);
    m.cls_token = Eigen::RowVectorXf::Random(4);
    m.reg_tokens = RowMatrixXf::Random(registers, 4);
    m.pos_embed = RowMatrixXf(3 + registers, 4);
    for (int r = 0; r < m.pos_embed.rows(); ++r)
        for (int c = 0; c < 4; ++c) m.pos_embed(r, c) = static_cast<float>(rng.normal(0.0, 0.3));
    for (int l = 0; l < 2; ++l) {
        ViTLayer layer;
        layer.ln1_g = ones(4);
        layer.ln1_b = zvec(4);
        layer.wq = layer.wk = layer.wv = layer.wo = zeros(4, 4);
        layer.bq = layer.bk = layer.bv = layer.bo = zvec(4);
        layer.ln2_g = ones(4);
        layer.ln2_b = zvec(4);
        layer.mlp_in = zeros(4, 8);
        layer.mlp_in_b = zvec(8);
        layer.mlp_out = zeros(8, 4);
        layer.mlp_out_b = zvec(4);
        m.layers.push_back(layer);
    }
    m.lnf_g = ones(4);
    m.lnf_b = zvec(4);
    m.proj_w = RowMatrixXf::Identity(4, 4);
    m.proj_b = zvec(4);
    return m;
}

std::vector<double> ln_then_normalize(std::vector<double> x, double eps) {
    double mean = 0.0;
    for (double v : x) mean += v / x.size();
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean) / x.size();
    double norm = 0.0;
    for (double& v : x) {
        v = (v - mean) / std::sqrt(var + eps);
        norm += v * v;
    }
    for (double& v : x) v /= std::sqrt(norm);
    return x;
}

ImageRGB random_image(Rng& rng, int h, int w) {
    ImageRGB img(h, w);
    for (float& v : img.values()) v = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST(ForwardDense, HandComputedTwoPatchModel) {
    for (int registers : {0, 2}) {
        const ViTModel model = identity_like_model(registers);
        model.validate();
        Rng rng(17);
        const ImageRGB img = random_image(rng, 2, 4);
        for (AttentionMode mode : {AttentionMode::orig, AttentionMode::mask, AttentionMode::naclip}) {
            const DenseFeatureMap f = forward_dense(img, model, AttentionConfig{mode, std::nullopt, 10.0});
            ASSERT_EQ(f.grid_h, 1);
            ASSERT_EQ(f.grid_w, 2);
            for (int p = 0; p < 2; ++p) {
                std::vector<double> x(4, 0.0);
                for (int c = 0; c < 3; ++c) {
                    for (int y = 0; y < 2; ++y)
                        for (int xx = 0; xx < 2; ++xx) x[c] += 0.25 * img.at(y, 2 * p + xx, c);
                }
                for (int c = 0; c < 4; ++c) x[c] += model.pos_embed(1 + p, c);
                const auto want = ln_then_normalize(x, model.ln_eps);
                for (int c = 0; c < 4; ++c) EXPECT_NEAR(f.patches(p, c), want[c], 1e-6);
            }
            std::vector<double> cls(4);
            for (int c = 0; c < 4; ++c) cls[c] = double(model.cls_token(c)) + model.pos_embed(0, c);
            const auto want = ln_then_normalize(cls, model.ln_eps);
            for (int c = 0; c < 4; ++c) EXPECT_NEAR(f.summary(c), want[c], 1e-6);
        }
    }
}

TEST(ForwardDense, GridShapeIndependentOfRegisters) {
    const ViTModel plain = synth::make_model(5, 0);
    const ViTModel regs = synth::make_model(5, 4);
    Rng rng(1);
    const ImageRGB img = random_image(rng, 32, 32);
    const DenseFeatureMap a = forward_dense(img, plain, AttentionConfig{});
    const DenseFeatureMap b = forward_dense(img, regs, AttentionConfig{});
    EXPECT_EQ(a.grid_h, 4);
    EXPECT_EQ(a.grid_w, 4);
    EXPECT_EQ(b.grid_h, 4);
    EXPECT_EQ(b.grid_w, 4);
    EXPECT_EQ(b.patches.rows(), 16);
    EXPECT_TRUE(a.all_valid());
}

TEST(ForwardDense, SoftmaxRowsNormalizedAndEmbeddingsUnit) {
    const ViTModel model = synth::make_model(8, 4);
    Rng rng(2);
    const ImageRGB img = random_image(rng, 24, 40);
    for (AttentionMode mode : {AttentionMode::orig, AttentionMode::naclip, AttentionMode::sclip, AttentionMode::mask}) {
        AttentionTrace trace;
        const DenseFeatureMap f = forward_dense(img, model, AttentionConfig{mode, std::nullopt, 10.0}, &trace);
        EXPECT_GT(trace.rows, 0u);
        EXPECT_LE(trace.max_row_sum_error, 1e-5);
        EXPECT_GE(trace.min_weight, 0.0);
        EXPECT_EQ(f.grid_h, 3);
        EXPECT_EQ(f.grid_w, 5);
        for (int p = 0; p < f.cell_count(); ++p) EXPECT_NEAR(f.patches.row(p).cast<double>().norm(), 1.0, 1e-5);
        EXPECT_NEAR(f.summary.cast<double>().norm(), 1.0, 1e-6);
    }
}

TEST(ForwardDense, RejectsIndivisibleImage) {
    const ViTModel model = synth::make_model(1, 0);
    EXPECT_THROW(forward_dense(ImageRGB(30, 32), model, AttentionConfig{}), InvalidArgument);
}

TEST(ForwardDense, MaskOutputIsHeadOfValues) {
    const ViTModel model = synth::make_model(9, 0);
    Rng rng(4);
    const ImageRGB img = random_image(rng, 32, 32);
    const DenseFeatureMap f = forward_dense(img, model, AttentionConfig{AttentionMode::mask, std::nullopt, 10.0});
    const LastLayerInput in = prepare_last_layer(img, model);
    RowMatrixXf want = finish_tokens(model, in.residual.middleRows(1, 16), in.state.v.middleRows(1, 16));
    for (int p = 0; p < 16; ++p) want.row(p) /= static_cast<float>(want.row(p).cast<double>().norm());
    EXPECT_LE((want - f.patches).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(EncodeSummary, UnitDeterministicAndConsistent) {
    const ViTModel model = synth::make_model(10, 4);
    Rng rng(5);
    for (int i = 0; i < 5; ++i) {
        const ImageRGB img = random_image(rng, 32, 16);
        const Eigen::RowVectorXf a = encode_summary(img, model, AttentionConfig{});
        const Eigen::RowVectorXf b = encode_summary(img, model, AttentionConfig{});
        EXPECT_NEAR(a.cast<double>().norm(), 1.0, 1e-6);
        EXPECT_TRUE(a == b);
        EXPECT_TRUE(a == forward_dense(img, model, AttentionConfig{}).summary);
    }
}

TEST(EncodeSummary, IndependentOfPatchAdapter) {
    const ViTModel model = synth::make_model(11, 0);
    Rng rng(6);
    const ImageRGB img = random_image(rng, 32, 32);
    const auto a = forward_dense(img, model, AttentionConfig{AttentionMode::mask, std::nullopt, 10.0}).summary;
    const auto b = forward_dense(img, model, AttentionConfig{AttentionMode::naclip, 0.3, 2.0}).summary;
    EXPECT_TRUE(a == b);
}

TEST(PosEmbed, NativeGridIsIdentity) {
    const ViTModel model = synth::make_model(12, 4);
    EXPECT_TRUE(interpolate_pos_embed(model, 4, 4) == model.pos_embed);
}

TEST(PosEmbed, ConstantTableStaysConstant) {
    ViTModel model = identity_like_model(1);
    model.grid_h = 2;
    model.grid_w = 2;
    model.pos_embed = RowMatrixXf::Constant(1 + 4 + 1, 4, 0.75f);
    for (auto [h, w] : {std::pair{1, 1}, std::pair{3, 5}, std::pair{7, 2}}) {
        const RowMatrixXf t = interpolate_pos_embed(model, h, w);
        ASSERT_EQ(t.rows(), 1 + h * w + 1);
        EXPECT_TRUE((t.array() == 0.75f).all());
    }
}

TEST(PosEmbed, HandBilinearCentre) {
    ViTModel model = identity_like_model(2);
    model.grid_h = 2;
    model.grid_w = 2;
    model.pos_embed = RowMatrixXf(1 + 4 + 2, 4);
    model.pos_embed.row(0).setConstant(-7.0f);
    const float grid[4] = {0, 1, 2, 3};
    for (int i = 0; i < 4; ++i) model.pos_embed.row(1 + i).setConstant(grid[i]);
    model.pos_embed.row(5).setConstant(8.0f);
    model.pos_embed.row(6).setConstant(9.0f);
    const RowMatrixXf t = interpolate_pos_embed(model, 3, 3);
    EXPECT_FLOAT_EQ(t(1 + 4, 0), 1.5f);
    EXPECT_FLOAT_EQ(t(1, 0), 0.0f);   // corner clamps to the corner value
    EXPECT_FLOAT_EQ(t(9, 2), 3.0f);
    EXPECT_FLOAT_EQ(t(0, 1), -7.0f);  // CLS copied
    EXPECT_FLOAT_EQ(t(10, 3), 8.0f);  // registers copied in order
    EXPECT_FLOAT_EQ(t(11, 3), 9.0f);
}

TEST(PosEmbed, LargerImagesUseInterpolatedTable) {
    const ViTModel model = synth::make_model(13, 0);
    Rng rng(7);
    const DenseFeatureMap f = forward_dense(random_image(rng, 48, 64), model, AttentionConfig{});
    EXPECT_EQ(f.grid_h, 6);
    EXPECT_EQ(f.grid_w, 8);
}

TEST(ModelIo, SaveLoadRoundTripIsExact) {
    ScratchDir dir;
    const ViTModel model = synth::make_model(14, 4);
    save_model(model, dir / "m");
    const ViTModel back = load_model(dir / "m");
    Rng rng(8);
    const ImageRGB img = random_image(rng, 32, 32);
    const DenseFeatureMap a = forward_dense(img, model, AttentionConfig{});
    const DenseFeatureMap b = forward_dense(img, back, AttentionConfig{});
    EXPECT_TRUE(a.patches == b.patches);
    EXPECT_TRUE(a.summary == b.summary);
    EXPECT_EQ(back.registers, 4);
    EXPECT_EQ(back.pixel_std, model.pixel_std);
}

TEST(ModelIo, ShapeMismatchAndMissingFilesFail) {
    ScratchDir dir;
    ViTModel model = synth::make_model(15, 0);
    save_model(model, dir / "m");
    std::filesystem::remove(dir / "m" / "proj_b.nst");
    EXPECT_THROW(load_model(dir / "m"), InputError);

    model.pos_embed = RowMatrixXf::Zero(3, model.embed_dim);
    EXPECT_THROW(model.validate(), InvalidArgument);
    EXPECT_THROW(load_model(dir / "nowhere"), InputError);
}
