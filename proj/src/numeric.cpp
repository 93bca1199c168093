#include "sail/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sail {

namespace {

template <typename T>
bool normalize_impl(std::span<T> v) {
    double ss = 0.0;
    for (T x : v) ss += static_cast<double>(x) * static_cast<double>(x);
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0)) return false;
    const double tol = 4.0 * std::numeric_limits<T>::epsilon();
    if (std::abs(norm - 1.0) <= tol) return true;
    for (T& x : v) x = static_cast<T>(static_cast<double>(x) / norm);
    return true;
}

}  // namespace

bool unit_normalize(std::span<float> v) { return normalize_impl(v); }
bool unit_normalize(std::span<double> v) { return normalize_impl(v); }

bool unit_normalize_rows(
    Eigen::Ref<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m) {
    bool ok = true;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ok &= unit_normalize(std::span<float>(m.row(r).data(), static_cast<std::size_t>(m.cols())));
    }
    return ok;
}

void softmax_inplace(std::span<double> logits) {
    if (logits.empty()) return;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& x : logits) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : logits) x /= sum;
}

}  // namespace sail
