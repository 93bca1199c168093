#include "sail/basis.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sail/config.hpp"
#include "sail/error.hpp"
#include "sail/numeric.hpp"

namespace sail {

namespace {

RowMatrixXd normalized_rows(const Eigen::Ref<const RowMatrixXd>& v) {
    RowMatrixXd out = v;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        if (!unit_normalize(std::span<double>(out.row(r).data(), static_cast<std::size_t>(out.cols())))) {
            throw InvalidArgument("cannot place a zero vector in the basis");
        }
    }
    return out;
}

Tensor to_tensor(const Eigen::Ref<const RowMatrixXd>& m) {
    return Tensor::from_matrix(m.cast<float>());
}

Tensor row_tensor(const Eigen::RowVectorXd& v) {
    const Eigen::RowVectorXf f = v.cast<float>();
    return Tensor::from_vector(std::span<const float>(f.data(), static_cast<std::size_t>(f.size())));
}

Eigen::RowVectorXd read_row(const std::filesystem::path& p) {
    const Tensor t = read_tensor(p);
    if (t.rank() != 1) throw InputError(p.string() + ": expected rank 1");
    Eigen::RowVectorXd v(static_cast<Eigen::Index>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
    return v;
}

}  // namespace

SharedBasis fit_basis(const Eigen::Ref<const RowMatrixXd>& vectors, int k) {
    const auto n = vectors.rows();
    const auto m = vectors.cols();
    if (k < 1) throw InvalidArgument("basis rank must be >= 1");
    if (k > n) throw InvalidArgument("basis rank exceeds number of vectors");
    if (k > m) throw InvalidArgument("basis rank exceeds vector dimension");
    const RowMatrixXd x = normalized_rows(vectors);

    SharedBasis b;
    b.mean = x.colwise().mean();
    const RowMatrixXd xc = x.rowwise() - b.mean;
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");

    // Eigen sorts ascending.
    b.spectrum = eig.eigenvalues().reverse();
    b.components.resize(k, m);
    for (int i = 0; i < k; ++i) {
        Eigen::RowVectorXd c = eig.eigenvectors().col(m - 1 - i).transpose();
        Eigen::Index arg = 0;
        c.cwiseAbs().maxCoeff(&arg);
        if (c(arg) < 0) c = -c;
        b.components.row(i) = c;
    }
    const RowMatrixXd coords = xc * b.components.transpose();
    b.range_min = coords.colwise().minCoeff();
    b.range_max = coords.colwise().maxCoeff();
    return b;
}

RowMatrixXd project(const SharedBasis& basis, const Eigen::Ref<const RowMatrixXd>& vectors) {
    if (vectors.cols() != basis.dim()) throw InvalidArgument("vector width does not match basis");
    const RowMatrixXd x = normalized_rows(vectors);
    return (x.rowwise() - basis.mean) * basis.components.transpose();
}

RowMatrixXd project_rgb(const SharedBasis& basis, const Eigen::Ref<const RowMatrixXd>& vectors) {
    if (basis.rank() < 3) throw InvalidArgument("RGB projection needs a basis of rank >= 3");
    const RowMatrixXd coords = project(basis, vectors);
    RowMatrixXd rgb(coords.rows(), 3);
    for (int c = 0; c < 3; ++c) {
        const double lo = basis.range_min(c);
        const double span = basis.range_max(c) - lo;
        for (Eigen::Index r = 0; r < coords.rows(); ++r) {
            rgb(r, c) = span > 0.0 ? std::clamp((coords(r, c) - lo) / span, 0.0, 1.0) : 0.5;
        }
    }
    return rgb;
}

Eigen::RowVectorXd softmax_image_projection(const Eigen::Ref<const Eigen::RowVectorXd>& w,
                                            const Eigen::Ref<const RowMatrixXd>& embeddings, double tau) {
    if (embeddings.rows() == 0) throw InvalidArgument("no image embeddings to project onto");
    if (!(tau > 0.0)) throw InvalidArgument("softmax temperature must be > 0");
    if (w.size() != embeddings.cols()) throw InvalidArgument("weight width does not match embeddings");
    std::vector<double> logits(static_cast<std::size_t>(embeddings.rows()));
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        logits[static_cast<std::size_t>(i)] = embeddings.row(i).dot(w) / tau;
    }
    softmax_inplace(logits);
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(embeddings.cols());
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        out += logits[static_cast<std::size_t>(i)] * embeddings.row(i);
    }
    if (!unit_normalize(std::span<double>(out.data(), static_cast<std::size_t>(out.size())))) {
        throw NumericError("softmax projection collapsed to zero");
    }
    return out;
}

void save_basis(const SharedBasis& basis, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_tensor(row_tensor(basis.mean), dir / "mean.nst");
    write_tensor(to_tensor(basis.components), dir / "components.nst");
    write_tensor(row_tensor(basis.spectrum.transpose()), dir / "spectrum.nst");
    write_tensor(row_tensor(basis.range_min), dir / "range_min.nst");
    write_tensor(row_tensor(basis.range_max), dir / "range_max.nst");
    Manifest m;
    m.set("method", "pca");
    m.set("rank", basis.rank());
    m.set("dim", basis.dim());
    m.write(dir / "manifest.txt");
}

SharedBasis load_basis(const std::filesystem::path& dir) {
    const Manifest m = Manifest::read(dir / "manifest.txt");
    SharedBasis b;
    b.mean = read_row(dir / "mean.nst");
    const Tensor comps = read_tensor(dir / "components.nst");
    if (comps.rank() != 2) throw InputError("components.nst must be rank 2");
    b.components = comps.matrix().cast<double>();
    b.spectrum = read_row(dir / "spectrum.nst").transpose();
    b.range_min = read_row(dir / "range_min.nst");
    b.range_max = read_row(dir / "range_max.nst");
    if (b.rank() != m.get_int("rank") || b.dim() != m.get_int("dim") || b.mean.size() != b.dim() ||
        b.range_min.size() != b.rank() || b.range_max.size() != b.rank()) {
        throw InputError(dir.string() + ": basis tensors disagree with manifest");
    }
    return b;
}

}  // namespace sail
