#pragma once

#include <filesystem>

#include "sail/tensor.hpp"

namespace sail {

/// Fixed linear basis shared between encoder weights and dense features.
struct SharedBasis {
    Eigen::RowVectorXd mean;   // M
    RowMatrixXd components;    // k x M, orthonormal rows
    Eigen::VectorXd spectrum;  // all M covariance eigenvalues, non-increasing
    Eigen::RowVectorXd range_min;  // per-component projection range on the fit set
    Eigen::RowVectorXd range_max;

    int rank() const { return static_cast<int>(components.rows()); }
    int dim() const { return static_cast<int>(components.cols()); }
};

/// PCA of unit-normalized rows (covariance divided by n). Each component is
/// signed so its largest-magnitude coordinate is positive.
SharedBasis fit_basis(const Eigen::Ref<const RowMatrixXd>& vectors, int k);

/// Coordinates of unit-normalized rows in the basis (n x k).
RowMatrixXd project(const SharedBasis& basis, const Eigen::Ref<const RowMatrixXd>& vectors);

/// First three coordinates mapped through the fit-time ranges and clamped to
/// [0,1]. A degenerate range maps to 0.5.
RowMatrixXd project_rgb(const SharedBasis& basis, const Eigen::Ref<const RowMatrixXd>& vectors);

/// sum_i softmax(E w / tau)_i E_i, unit-normalized.
Eigen::RowVectorXd softmax_image_projection(const Eigen::Ref<const Eigen::RowVectorXd>& w,
                                            const Eigen::Ref<const RowMatrixXd>& embeddings, double tau);

void save_basis(const SharedBasis& basis, const std::filesystem::path& dir);
SharedBasis load_basis(const std::filesystem::path& dir);

}  // namespace sail
