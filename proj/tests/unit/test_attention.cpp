#include <gtest/gtest.h>

#include <cmath>

#include "sail/attention.hpp"
#include "sail/error.hpp"
#include "sail/rng.hpp"
#include "support/oracles.hpp"

using namespace sail;

namespace {

RowMatrixXf random_matrix(Rng& rng, int rows, int cols, double sd = 1.0) {
    RowMatrixXf m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(rng.normal(0.0, sd));
    return m;
}

/// Single head, v of the patch tokens = identity, so output rows are the
/// attention weights themselves.
AttentionState probe_state(Rng& rng, int gh, int gw, int registers = 0) {
    const int m = gh * gw;
    const int t = 1 + m + registers;
    AttentionState s;
    s.heads = 1;
    s.grid_h = gh;
    s.grid_w = gw;
    s.registers = registers;
    s.q = random_matrix(rng, t, m);
    s.k = random_matrix(rng, t, m);
    s.v = random_matrix(rng, t, m);
    s.v.middleRows(1, m) = RowMatrixXf::Identity(m, m);
    return s;
}

oracle::Vec row_logits(const RowMatrixXf& a, const RowMatrixXf& b, int j, double scale, int first, int count) {
    oracle::Vec out;
    for (int i = first; i < first + count; ++i) {
        double dot = 0.0;
        for (int c = 0; c < a.cols(); ++c) dot += static_cast<double>(a(j, c)) * b(i, c);
        out.push_back(dot / scale);
    }
    return out;
}

}  // namespace

TEST(GaussianBias, DiagonalZeroAndSymmetric) {
    const GaussianBias g = gaussian_bias(3, 4, 2.0);
    ASSERT_EQ(g.omega.rows(), 12);
    for (int i = 0; i < 12; ++i) {
        EXPECT_EQ(g.omega(i, i), 0.0);
        for (int j = 0; j < 12; ++j) {
            EXPECT_EQ(g.omega(i, j), g.omega(j, i));
            EXPECT_LE(g.omega(i, j), g.omega(i, i));
        }
    }
    // (0,0) to (2,3): squared distance 13.
    EXPECT_DOUBLE_EQ(g.omega(0, 11), -13.0 / 8.0);
}

TEST(GaussianBias, OneByTwoUnitSigma) {
    const GaussianBias g = gaussian_bias(1, 2, 1.0);
    EXPECT_DOUBLE_EQ(g.omega(0, 1), -0.5);
    EXPECT_DOUBLE_EQ(g.omega(1, 0), -0.5);
}

TEST(GaussianBias, RejectsNonPositiveSigma) {
    EXPECT_THROW(gaussian_bias(2, 2, 0.0), InvalidArgument);
    EXPECT_THROW(gaussian_bias(2, 2, -1.0), InvalidArgument);
}

TEST(AttentionConfig, ScaleResolution) {
    AttentionConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.resolved_scale(16), 4.0);
    cfg.scale = 0.5;
    EXPECT_DOUBLE_EQ(cfg.resolved_scale(16), 0.5);
    cfg.scale = 0.0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    EXPECT_EQ(parse_attention_mode("naclip"), AttentionMode::naclip);
    EXPECT_THROW(parse_attention_mode("bogus"), InvalidArgument);
}

TEST(DenseAttend, MaskReturnsValuesExactly) {
    Rng rng(1);
    AttentionState s = probe_state(rng, 3, 3, 2);
    s.v = random_matrix(rng, s.token_count(), 9);
    AttentionConfig cfg{AttentionMode::mask, std::nullopt, 10.0};
    const RowMatrixXf out = dense_attend(s, cfg);
    ASSERT_EQ(out.rows(), 9);
    EXPECT_TRUE(out == s.v.middleRows(1, 9));
}

TEST(DenseAttend, MaskIsPermutationEquivariant) {
    Rng rng(2);
    AttentionState s = probe_state(rng, 2, 2);
    s.v = random_matrix(rng, 5, 4);
    AttentionState p = s;
    const int perm[4] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) {
        p.q.row(1 + i) = s.q.row(1 + perm[i]);
        p.k.row(1 + i) = s.k.row(1 + perm[i]);
        p.v.row(1 + i) = s.v.row(1 + perm[i]);
    }
    AttentionConfig cfg{AttentionMode::mask, std::nullopt, 10.0};
    const RowMatrixXf a = dense_attend(s, cfg);
    const RowMatrixXf b = dense_attend(p, cfg);
    for (int i = 0; i < 4; ++i) EXPECT_TRUE(b.row(i) == a.row(perm[i]));
}

TEST(DenseAttend, OrigMatchesDirectSoftmaxOverPatches) {
    Rng rng(3);
    const AttentionState s = probe_state(rng, 2, 3, 1);
    AttentionConfig cfg{AttentionMode::orig, 1.7, 10.0};
    const RowMatrixXf out = dense_attend(s, cfg);
    for (int j = 0; j < 6; ++j) {
        const auto w = oracle::softmax(row_logits(s.q, s.k, 1 + j, 1.7, 1, 6));
        for (int i = 0; i < 6; ++i) EXPECT_NEAR(out(j, i), w[i], 1e-6);
    }
}

TEST(DenseAttend, NaclipEqualQueriesReduceToBiasSoftmax) {
    Rng rng(4);
    AttentionState s = probe_state(rng, 3, 3);
    const RowMatrixXf q0 = random_matrix(rng, 1, 9);
    for (int t = 0; t < s.token_count(); ++t) s.q.row(t) = q0;
    const double scale = 0.8;
    AttentionConfig cfg{AttentionMode::naclip, scale, 1.5};
    const RowMatrixXf out = dense_attend(s, cfg);
    const GaussianBias g = gaussian_bias(3, 3, 1.5);
    for (int j = 0; j < 9; ++j) {
        oracle::Vec logits;
        for (int i = 0; i < 9; ++i) logits.push_back(g.omega(j, i) / scale);
        const auto w = oracle::softmax(logits);
        for (int i = 0; i < 9; ++i) EXPECT_NEAR(out(j, i), w[i], 1e-6);
    }
}

TEST(DenseAttend, NaclipWithoutBiasIsCorrelativeAttention) {
    Rng rng(5);
    const AttentionState s = probe_state(rng, 2, 2);
    AttentionConfig cfg{AttentionMode::naclip, 2.0, 1e9};
    const RowMatrixXf out = dense_attend(s, cfg);
    for (int j = 0; j < 4; ++j) {
        const auto w = oracle::softmax(row_logits(s.q, s.q, 1 + j, 2.0, 1, 4));
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(out(j, i), w[i], 1e-6);
    }
}

TEST(DenseAttend, NaclipTinySigmaCollapsesToMask) {
    Rng rng(6);
    AttentionState s = probe_state(rng, 4, 4);
    s.v = random_matrix(rng, s.token_count(), 16);
    AttentionConfig naclip{AttentionMode::naclip, std::nullopt, 1e-3};
    AttentionConfig mask{AttentionMode::mask, std::nullopt, 10.0};
    const RowMatrixXf a = dense_attend(s, naclip);
    const RowMatrixXf b = dense_attend(s, mask);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(DenseAttend, SclipAveragesTwoCorrelativeMaps) {
    Rng rng(7);
    const AttentionState s = probe_state(rng, 2, 2);
    AttentionConfig cfg{AttentionMode::sclip, 1.3, 10.0};
    const RowMatrixXf out = dense_attend(s, cfg);
    for (int j = 0; j < 4; ++j) {
        const auto wq = oracle::softmax(row_logits(s.q, s.q, 1 + j, 1.3, 1, 4));
        const auto wk = oracle::softmax(row_logits(s.k, s.k, 1 + j, 1.3, 1, 4));
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(out(j, i), 0.5 * (wq[i] + wk[i]), 1e-6);
    }
}

TEST(DenseAttend, SoftmaxModesAreConvex) {
    Rng rng(8);
    for (AttentionMode mode : {AttentionMode::orig, AttentionMode::naclip, AttentionMode::sclip}) {
        const AttentionState s = probe_state(rng, 3, 4, 2);
        AttentionTrace trace;
        const RowMatrixXf out = dense_attend(s, AttentionConfig{mode, std::nullopt, 10.0}, &trace);
        EXPECT_GE(trace.rows, 12u);
        EXPECT_LE(trace.max_row_sum_error, 1e-6);
        EXPECT_GE(trace.min_weight, 0.0);
        for (int j = 0; j < 12; ++j) {
            EXPECT_NEAR(out.row(j).cast<double>().sum(), 1.0, 1e-6);
            EXPECT_GE(out.row(j).minCoeff(), 0.0f);
        }
    }
}

TEST(FullAttention, MultiHeadMatchesPerHeadOracle) {
    Rng rng(9);
    AttentionState s;
    s.heads = 2;
    s.grid_h = 1;
    s.grid_w = 2;
    s.registers = 1;
    s.q = random_matrix(rng, 4, 6);
    s.k = random_matrix(rng, 4, 6);
    s.v = random_matrix(rng, 4, 6);
    const double scale = std::sqrt(3.0);
    const RowMatrixXf out = full_attention(s, scale);
    for (int h = 0; h < 2; ++h) {
        const RowMatrixXf qh = s.q.middleCols(3 * h, 3), kh = s.k.middleCols(3 * h, 3);
        for (int j = 0; j < 4; ++j) {
            const auto w = oracle::softmax(row_logits(qh, kh, j, scale, 0, 4));
            for (int c = 0; c < 3; ++c) {
                double want = 0.0;
                for (int i = 0; i < 4; ++i) want += w[i] * s.v(i, 3 * h + c);
                EXPECT_NEAR(out(j, 3 * h + c), want, 1e-5);
            }
        }
    }
    const Eigen::RowVectorXf cls = token_attention(s, 0, scale);
    EXPECT_LE((cls - out.row(0)).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(AttentionState, ValidateRejectsMismatch) {
    Rng rng(10);
    AttentionState s = probe_state(rng, 2, 2);
    EXPECT_NO_THROW(s.validate());
    s.k = random_matrix(rng, 4, 4);
    EXPECT_THROW(s.validate(), InvalidArgument);
}
