#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sail/tensor.hpp"

namespace sail {

/// Voxel-wise linear encoder: responses = (e / ||e||) * W + b.
struct LinearProbe {
    RowMatrixXd weights;  // M x N; column j is voxel j's selectivity vector
    Eigen::RowVectorXd bias;

    int dim() const { return static_cast<int>(weights.rows()); }
    int voxels() const { return static_cast<int>(weights.cols()); }
};

/// 1e-3 per training sample.
double default_ridge_lambda(std::size_t n_samples);

/// Closed-form ridge with an unpenalized bias: centre X and Y, solve
/// (Xc'Xc + lambda I) W = Xc'Yc by Cholesky, b = mean(Y) - mean(X) W.
/// Rows of X must be unit-norm. Throws NumericError when the system is not
/// positive definite.
LinearProbe fit_ridge(const Eigen::Ref<const RowMatrixXd>& x, const Eigen::Ref<const RowMatrixXd>& y,
                      double lambda);

/// Mini-batch AdamW on the mean squared error, learning rate decaying
/// exponentially from lr_start to lr_end across the epochs.
struct AdamWOptions {
    int epochs = 100;
    int batch_size = 8;
    double lr_start = 3e-4;
    double lr_end = 1.5e-4;
    double weight_decay = 2e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
};

LinearProbe fit_adamw(const Eigen::Ref<const RowMatrixXd>& x, const Eigen::Ref<const RowMatrixXd>& y,
                      const AdamWOptions& opts = {});

/// e is normalized internally.
Eigen::RowVectorXd predict(const LinearProbe& probe, const Eigen::Ref<const Eigen::RowVectorXd>& e);
RowMatrixXd predict_rows(const LinearProbe& probe, const Eigen::Ref<const RowMatrixXd>& x);

struct R2Scores {
    Eigen::RowVectorXd scores;
    /// 1 where the truth column is constant; its score is reported as 0.
    std::vector<std::uint8_t> constant_truth;
};

R2Scores r2_score(const Eigen::Ref<const RowMatrixXd>& pred, const Eigen::Ref<const RowMatrixXd>& truth);

/// W.nst, b.nst and manifest.txt in dir.
void save_probe(const LinearProbe& probe, const std::filesystem::path& dir);
LinearProbe load_probe(const std::filesystem::path& dir);

}  // namespace sail
