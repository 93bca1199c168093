#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "sail/distill.hpp"
#include "sail/metrics.hpp"
#include "sail/probe.hpp"
#include "sail/relevance.hpp"
#include "sail/vit.hpp"

namespace sail::synth {

inline constexpr std::array<std::string_view, 4> kCategories = {"face", "body", "scene", "food"};
inline constexpr int kImageSize = 32;

struct Options {
    std::uint64_t seed = 7;
    int images = 32;
    /// Leading images used to fit the encoder; the rest are the test split.
    int train = 28;
    int voxels = 64;
    int prompts_per_category = 3;
    double beta_noise = 0.05;
};

/// Everything the offline pipeline and acceptance checks run on.
struct Fixture {
    Options options;
    ViTModel model;           // no registers
    ViTModel model_registers; // 4 registers
    std::vector<ImageRGB> images;
    std::vector<LabelGrid> labels;
    std::vector<RowMatrixXd> depth;  // patch resolution
    QuerySet queries;                // one group per category
    LinearProbe probe;               // planted W*, b*
    std::vector<std::vector<int>> regions;  // category -> voxel indices
    RowMatrixXd summaries;           // images x M, as stored (f32 values)
    RowMatrixXd betas_clean;
    RowMatrixXd betas;               // betas_clean + N(0, beta_noise^2)
};

/// Tiny ViT (P=8, D=32, 4 heads, 2 layers, M=16, native grid 4x4).
ViTModel make_model(std::uint64_t seed, int registers);

/// Full-frame texture of one category at the given saturation in [0,1].
ImageRGB category_texture(int category, double saturation, std::uint64_t seed);

Fixture build_fixture(const Options& options);

/// Writes models, images, labels, depth, queries, planted probe, betas and
/// manifest.txt under dir.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

/// Wraps forward_dense and corrupts a few patches per view with strong random
/// directions. Positions and directions are seeded by a hash of the input
/// image, so they move with the view rather than with the scene content.
DenseExtractor artifact_extractor(const ViTModel& model, const AttentionConfig& cfg, int artifacts = 3,
                                  double strength = 2.0);

/// Unit-normalized ridge readout of patch saturation from patch features,
/// fitted on scenes disjoint from the fixture corpus.
Eigen::RowVectorXd saturation_direction(const ViTModel& model, const AttentionConfig& cfg,
                                        std::uint64_t seed);

}  // namespace sail::synth
