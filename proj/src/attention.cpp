#include "sail/attention.hpp"

#include <cmath>
#include <vector>

#include "sail/error.hpp"
#include "sail/numeric.hpp"

namespace sail {

AttentionMode parse_attention_mode(std::string_view s) {
    if (s == "orig") return AttentionMode::orig;
    if (s == "mask") return AttentionMode::mask;
    if (s == "naclip") return AttentionMode::naclip;
    if (s == "sclip") return AttentionMode::sclip;
    throw InvalidArgument("unknown attention mode '" + std::string(s) +
                          "' (orig|mask|naclip|sclip)");
}

std::string_view to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::orig: return "orig";
        case AttentionMode::mask: return "mask";
        case AttentionMode::naclip: return "naclip";
        case AttentionMode::sclip: return "sclip";
    }
    return "?";
}

double AttentionConfig::resolved_scale(int head_dim) const {
    return scale ? *scale : std::sqrt(static_cast<double>(head_dim));
}

void AttentionConfig::validate() const {
    if (scale && !(*scale > 0.0)) throw InvalidArgument("attention scale C must be > 0");
    if (!(sigma > 0.0)) throw InvalidArgument("sigma must be > 0");
}

void AttentionTrace::record(std::span<const double> weights) {
    double sum = 0.0;
    for (double w : weights) {
        sum += w;
        min_weight = std::min(min_weight, w);
    }
    max_row_sum_error = std::max(max_row_sum_error, std::abs(sum - 1.0));
    ++rows;
}

void AttentionState::validate() const {
    if (heads < 1 || q.cols() % heads != 0) {
        throw InvalidArgument("embedding width not divisible by head count");
    }
    if (k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != q.cols() ||
        v.cols() != q.cols()) {
        throw InvalidArgument("q, k, v disagree in token count or width");
    }
    if (grid_h < 1 || grid_w < 1 || registers < 0 ||
        token_count() != 1 + patch_count() + registers) {
        throw InvalidArgument("token count does not match 1 + grid + registers");
    }
}

GaussianBias gaussian_bias(int grid_h, int grid_w, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("gaussian bias sigma must be > 0");
    if (grid_h < 1 || grid_w < 1) throw InvalidArgument("grid must be non-empty");
    const int m = grid_h * grid_w;
    GaussianBias bias{RowMatrixXd(m, m), sigma};
    const double denom = 2.0 * sigma * sigma;
    for (int j = 0; j < m; ++j) {
        for (int k = 0; k < m; ++k) {
            const double dy = j / grid_w - k / grid_w;
            const double dx = j % grid_w - k % grid_w;
            bias.omega(j, k) = -(dx * dx + dy * dy) / denom;
        }
    }
    return bias;
}

namespace {

double dot_head(const RowMatrixXf& a, int i, const RowMatrixXf& b, int j, int offset, int width) {
    double s = 0.0;
    for (int c = 0; c < width; ++c) {
        s += static_cast<double>(a(i, offset + c)) * static_cast<double>(b(j, offset + c));
    }
    return s;
}

void accumulate_values(const std::vector<double>& w, const RowMatrixXf& v, int first_token,
                       int offset, int width, Eigen::Ref<Eigen::RowVectorXf> out) {
    for (int c = 0; c < width; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < w.size(); ++t) {
            acc += w[t] * static_cast<double>(v(first_token + static_cast<int>(t), offset + c));
        }
        out(offset + c) = static_cast<float>(acc);
    }
}

}  // namespace

Eigen::RowVectorXf token_attention(const AttentionState& state, int token, double scale,
                                   AttentionTrace* trace) {
    const int n = state.token_count();
    const int d = state.head_dim();
    Eigen::RowVectorXf out(state.q.cols());
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int h = 0; h < state.heads; ++h) {
        const int off = h * d;
        for (int t = 0; t < n; ++t) w[t] = dot_head(state.q, token, state.k, t, off, d) / scale;
        softmax_inplace(w);
        if (trace) trace->record(w);
        accumulate_values(w, state.v, 0, off, d, out);
    }
    return out;
}

RowMatrixXf full_attention(const AttentionState& state, double scale, AttentionTrace* trace) {
    state.validate();
    RowMatrixXf out(state.token_count(), state.q.cols());
    for (int t = 0; t < state.token_count(); ++t) {
        out.row(t) = token_attention(state, t, scale, trace);
    }
    return out;
}

RowMatrixXf dense_attend(const AttentionState& state, const AttentionConfig& cfg,
                         AttentionTrace* trace) {
    state.validate();
    cfg.validate();
    const int m = state.patch_count();
    const int d = state.head_dim();
    constexpr int first = 1;  // patches follow the CLS token
    RowMatrixXf out(m, state.q.cols());

    if (cfg.mode == AttentionMode::mask) {
        out = state.v.middleRows(first, m);
        return out;
    }

    const double scale = cfg.resolved_scale(d);
    GaussianBias bias;
    if (cfg.mode == AttentionMode::naclip) bias = gaussian_bias(state.grid_h, state.grid_w, cfg.sigma);

    std::vector<double> w(static_cast<std::size_t>(m));
    std::vector<double> w2(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        for (int h = 0; h < state.heads; ++h) {
            const int off = h * d;
            switch (cfg.mode) {
                case AttentionMode::orig:
                    for (int k = 0; k < m; ++k) {
                        w[k] = dot_head(state.q, first + j, state.k, first + k, off, d) / scale;
                    }
                    softmax_inplace(w);
                    break;
                case AttentionMode::naclip:
                    for (int k = 0; k < m; ++k) {
                        w[k] = (dot_head(state.q, first + j, state.q, first + k, off, d) +
                                bias.omega(j, k)) /
                               scale;
                    }
                    softmax_inplace(w);
                    break;
                case AttentionMode::sclip:
                    for (int k = 0; k < m; ++k) {
                        w[k] = dot_head(state.q, first + j, state.q, first + k, off, d) / scale;
                        w2[k] = dot_head(state.k, first + j, state.k, first + k, off, d) / scale;
                    }
                    softmax_inplace(w);
                    softmax_inplace(w2);
                    for (int k = 0; k < m; ++k) w[k] = 0.5 * (w[k] + w2[k]);
                    break;
                case AttentionMode::mask:
                    break;
            }
            if (trace) trace->record(w);
            accumulate_values(w, state.v, first, off, d, out.row(j));
        }
    }
    return out;
}

}  // namespace sail
