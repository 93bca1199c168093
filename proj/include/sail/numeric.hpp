#pragma once

#include <span>

#include <Eigen/Dense>

namespace sail {

/// Scales v to unit L2 norm, accumulating the norm in f64. Vectors already
/// unit-norm to within a few f32 ulps are returned untouched, so normalizing
/// twice is bit-identical to normalizing once. Returns false for a zero vector.
bool unit_normalize(std::span<float> v);
bool unit_normalize(std::span<double> v);

/// Normalizes every row of m; returns false if any row was zero.
bool unit_normalize_rows(Eigen::Ref<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m);

/// In-place numerically stable softmax in f64.
void softmax_inplace(std::span<double> logits);

}  // namespace sail
