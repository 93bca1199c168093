#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sail/attention.hpp"
#include "sail/image.hpp"
#include "sail/tensor.hpp"

namespace sail {

struct ViTLayer {
    Eigen::RowVectorXf ln1_g, ln1_b;
    RowMatrixXf wq, wk, wv, wo;  // D x D, applied as x * W
    Eigen::RowVectorXf bq, bk, bv, bo;
    Eigen::RowVectorXf ln2_g, ln2_b;
    RowMatrixXf mlp_in;  // D x F
    Eigen::RowVectorXf mlp_in_b;
    RowMatrixXf mlp_out;  // F x D
    Eigen::RowVectorXf mlp_out_b;
};

/// Vision transformer weights. Token order everywhere is
/// [CLS, patches in row-major order, registers].
struct ViTModel {
    int patch_size = 0;
    int embed_dim = 0;
    int heads = 0;
    int registers = 0;
    int out_dim = 0;
    int grid_h = 0;  // native positional grid
    int grid_w = 0;
    double ln_eps = 1e-5;
    /// Per-channel input normalization, (pixel - mean) / std.
    std::array<float, 3> pixel_mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> pixel_std{1.0f, 1.0f, 1.0f};

    RowMatrixXf patch_w;  // (3 P P) x D, input index (py * P + px) * 3 + channel
    Eigen::RowVectorXf patch_b;
    Eigen::RowVectorXf cls_token;
    RowMatrixXf reg_tokens;  // R x D
    RowMatrixXf pos_embed;   // (1 + Gh0 Gw0 + R) x D
    std::vector<ViTLayer> layers;
    Eigen::RowVectorXf lnf_g, lnf_b;
    RowMatrixXf proj_w;  // D x M
    Eigen::RowVectorXf proj_b;

    int head_dim() const { return embed_dim / heads; }
    int mlp_dim() const { return layers.empty() ? 0 : static_cast<int>(layers[0].mlp_in.cols()); }
    int native_patches() const { return grid_h * grid_w; }

    /// Throws InvalidArgument on any inconsistent weight shape.
    void validate() const;
};

/// Loads manifest.txt plus one NST1 file per weight from a directory.
ViTModel load_model(const std::filesystem::path& dir);
void save_model(const ViTModel& model, const std::filesystem::path& dir);

/// Positional table for a new patch grid. CLS and register rows are copied;
/// spatial rows are bilinearly resampled on patch centres (half-cell aligned,
/// edge clamped).
RowMatrixXf interpolate_pos_embed(const ViTModel& model, int grid_h, int grid_w);

/// Per-patch embeddings plus the summary (CLS) embedding.
struct DenseFeatureMap {
    int grid_h = 0;
    int grid_w = 0;
    RowMatrixXf patches;  // (grid_h * grid_w) x M
    Eigen::RowVectorXf summary;
    std::vector<std::uint8_t> valid;

    int dim() const { return static_cast<int>(patches.cols()); }
    int cell_count() const { return grid_h * grid_w; }
    bool all_valid() const;
};

/// Residual stream entering the final block plus its attention projections.
struct LastLayerInput {
    RowMatrixXf residual;  // T x D
    AttentionState state;
};

LastLayerInput prepare_last_layer(const ImageRGB& image, const ViTModel& model,
                                  AttentionTrace* trace = nullptr);

/// The post-attention head applied to every output token: output projection,
/// residual add, MLP residual, final LayerNorm, projection to M. Rows are not
/// normalized.
RowMatrixXf finish_tokens(const ViTModel& model, const Eigen::Ref<const RowMatrixXf>& residual,
                          const Eigen::Ref<const RowMatrixXf>& mixed);

DenseFeatureMap forward_dense(const ImageRGB& image, const ViTModel& model,
                              const AttentionConfig& cfg, AttentionTrace* trace = nullptr);

/// Unit-norm summary embedding; equals forward_dense(...).summary.
Eigen::RowVectorXf encode_summary(const ImageRGB& image, const ViTModel& model,
                                  const AttentionConfig& cfg);

}  // namespace sail
