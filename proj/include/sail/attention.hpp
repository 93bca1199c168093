#pragma once

#include <limits>
#include <optional>
#include <string_view>

#include "sail/tensor.hpp"

namespace sail {

/// Last-layer attention used for patch tokens.
///  orig   - softmax(q_j k^T / C) v over patches
///  mask   - v_j (no mixing)
///  naclip - softmax((q_j q^T + omega_j) / C) v with a Gaussian neighbourhood bias
///  sclip  - row-normalized (softmax(q q^T / C) + softmax(k k^T / C)) v; best effort
enum class AttentionMode { orig, mask, naclip, sclip };

AttentionMode parse_attention_mode(std::string_view s);
std::string_view to_string(AttentionMode m);

struct AttentionConfig {
    AttentionMode mode = AttentionMode::naclip;
    /// Softmax temperature C. Unset means sqrt(head dim).
    std::optional<double> scale;
    /// Gaussian bias width in patch units (naclip only).
    double sigma = 10.0;

    double resolved_scale(int head_dim) const;
    void validate() const;
};

/// Running summary of every softmax row produced during a forward pass.
struct AttentionTrace {
    std::size_t rows = 0;
    double max_row_sum_error = 0.0;
    double min_weight = std::numeric_limits<double>::infinity();

    void record(std::span<const double> weights);
};

/// Per-token projections entering the last attention block. Token order is
/// [CLS, patches in row-major grid order, registers].
struct AttentionState {
    RowMatrixXf q, k, v;
    int heads = 1;
    int grid_h = 0;
    int grid_w = 0;
    int registers = 0;

    int patch_count() const { return grid_h * grid_w; }
    int token_count() const { return static_cast<int>(q.rows()); }
    int head_dim() const { return static_cast<int>(q.cols()) / heads; }
    /// Throws InvalidArgument if shapes disagree.
    void validate() const;
};

struct GaussianBias {
    /// m x m logit offsets, -||pos_j - pos_k||^2 / (2 sigma^2).
    RowMatrixXd omega;
    double sigma = 0.0;
};

GaussianBias gaussian_bias(int grid_h, int grid_w, double sigma);

/// Standard multi-head scaled dot-product attention of every token over every
/// token; returns the mixed values (T x D) before the output projection.
RowMatrixXf full_attention(const AttentionState& state, double scale,
                           AttentionTrace* trace = nullptr);

/// Attention of a single query token over all tokens (used for the CLS path).
Eigen::RowVectorXf token_attention(const AttentionState& state, int token, double scale,
                                   AttentionTrace* trace = nullptr);

/// Patch-token mixing for the configured adapter; returns m x D values before
/// the output projection. CLS and registers take no part.
RowMatrixXf dense_attend(const AttentionState& state, const AttentionConfig& cfg,
                         AttentionTrace* trace = nullptr);

}  // namespace sail
