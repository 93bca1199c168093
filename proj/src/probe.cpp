#include "sail/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sail/config.hpp"
#include "sail/error.hpp"

namespace sail {

namespace {

/// Validates the inputs and returns x with rows renormalized in f64, the
/// same scaling predict() applies.
RowMatrixXd checked_rows(const Eigen::Ref<const RowMatrixXd>& x, const Eigen::Ref<const RowMatrixXd>& y) {
    if (x.rows() < 1) throw InvalidArgument("fit needs at least one sample");
    if (x.rows() != y.rows()) {
        throw InvalidArgument("embedding rows (" + std::to_string(x.rows()) +
                              ") do not match response rows (" + std::to_string(y.rows()) + ")");
    }
    if (!x.allFinite() || !y.allFinite()) throw InvalidArgument("fit inputs must be finite");
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (std::abs(x.row(r).norm() - 1.0) > 1e-4) {
            throw InvalidArgument("embedding row " + std::to_string(r) + " is not unit-norm");
        }
    }
    return x.rowwise().normalized();
}

}  // namespace

double default_ridge_lambda(std::size_t n_samples) { return 1e-3 * static_cast<double>(n_samples); }

LinearProbe fit_ridge(const Eigen::Ref<const RowMatrixXd>& x_in, const Eigen::Ref<const RowMatrixXd>& y,
                      double lambda) {
    const RowMatrixXd x = checked_rows(x_in, y);
    if (!(lambda >= 0.0)) throw InvalidArgument("ridge lambda must be >= 0");
    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const Eigen::RowVectorXd y_mean = y.colwise().mean();
    const RowMatrixXd xc = x.rowwise() - x_mean;
    const RowMatrixXd yc = y.rowwise() - y_mean;

    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
        throw NumericError("ridge system is singular (lambda=" + format_double(lambda) +
                           "); add regularization or more samples");
    }
    LinearProbe probe;
    probe.weights = llt.solve(xc.transpose() * yc);
    probe.bias = y_mean - x_mean * probe.weights;
    return probe;
}

LinearProbe fit_adamw(const Eigen::Ref<const RowMatrixXd>& x_in, const Eigen::Ref<const RowMatrixXd>& y,
                      const AdamWOptions& opts) {
    const RowMatrixXd x = checked_rows(x_in, y);
    if (opts.epochs < 1 || opts.batch_size < 1) throw InvalidArgument("epochs and batch size must be >= 1");
    const Eigen::Index n = x.rows();
    const Eigen::Index m = x.cols();
    const Eigen::Index v = y.cols();

    LinearProbe p{RowMatrixXd::Zero(m, v), Eigen::RowVectorXd::Zero(v)};
    RowMatrixXd m_w = RowMatrixXd::Zero(m, v), v_w = RowMatrixXd::Zero(m, v);
    Eigen::RowVectorXd m_b = Eigen::RowVectorXd::Zero(v), v_b = Eigen::RowVectorXd::Zero(v);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(opts.seed);
    long long step = 0;
    const double decay = opts.epochs > 1 ? std::log(opts.lr_end / opts.lr_start) / (opts.epochs - 1) : 0.0;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const double lr = opts.lr_start * std::exp(decay * epoch);
        // Fisher-Yates with raw engine output keeps the order library-independent.
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        for (Eigen::Index start = 0; start < n; start += opts.batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(opts.batch_size, n - start);
            RowMatrixXd xb(len, m), yb(len, v);
            for (Eigen::Index r = 0; r < len; ++r) {
                xb.row(r) = x.row(order[static_cast<std::size_t>(start + r)]);
                yb.row(r) = y.row(order[static_cast<std::size_t>(start + r)]);
            }
            RowMatrixXd resid = xb * p.weights;
            resid.rowwise() += p.bias;
            resid -= yb;
            const RowMatrixXd g_w = (2.0 / len) * (xb.transpose() * resid);
            const Eigen::RowVectorXd g_b = (2.0 / len) * resid.colwise().sum();

            ++step;
            const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
            auto update = [&](auto& param, auto& mom, auto& var, const auto& grad) {
                param *= 1.0 - lr * opts.weight_decay;
                mom = opts.beta1 * mom + (1.0 - opts.beta1) * grad;
                var = opts.beta2 * var + (1.0 - opts.beta2) * grad.cwiseProduct(grad);
                param.array() -= lr * (mom.array() / c1) / ((var.array() / c2).sqrt() + opts.eps);
            };
            update(p.weights, m_w, v_w, g_w);
            update(p.bias, m_b, v_b, g_b);
        }
    }
    return p;
}

Eigen::RowVectorXd predict(const LinearProbe& probe, const Eigen::Ref<const Eigen::RowVectorXd>& e) {
    if (e.size() != probe.dim()) {
        throw InvalidArgument("embedding has " + std::to_string(e.size()) + " dims, probe expects " +
                              std::to_string(probe.dim()));
    }
    const double norm = e.norm();
    if (!(norm > 0.0)) throw InvalidArgument("cannot predict from a zero embedding");
    return (e / norm) * probe.weights + probe.bias;
}

RowMatrixXd predict_rows(const LinearProbe& probe, const Eigen::Ref<const RowMatrixXd>& x) {
    RowMatrixXd out(x.rows(), probe.voxels());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = predict(probe, x.row(r));
    return out;
}

R2Scores r2_score(const Eigen::Ref<const RowMatrixXd>& pred, const Eigen::Ref<const RowMatrixXd>& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw InvalidArgument("prediction and truth shapes differ");
    }
    if (truth.rows() < 2) throw InvalidArgument("r2 needs at least 2 samples");
    R2Scores out{Eigen::RowVectorXd::Zero(truth.cols()),
                 std::vector<std::uint8_t>(static_cast<std::size_t>(truth.cols()), 0)};
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
        const double mean = truth.col(j).mean();
        const double ss_tot = (truth.col(j).array() - mean).square().sum();
        const double ss_res = (truth.col(j) - pred.col(j)).squaredNorm();
        if (ss_tot == 0.0) {
            out.constant_truth[static_cast<std::size_t>(j)] = 1;
            continue;
        }
        out.scores(j) = 1.0 - ss_res / ss_tot;
    }
    return out;
}

void save_probe(const LinearProbe& probe, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const RowMatrixXf w = probe.weights.cast<float>();
    write_tensor(Tensor::from_matrix(w), dir / "W.nst");
    const RowMatrixXf b = probe.bias.cast<float>();
    write_tensor(Tensor({static_cast<std::size_t>(b.cols())},
                        std::vector<float>(b.data(), b.data() + b.size())),
                 dir / "b.nst");
    Manifest m;
    m.set("dim", probe.dim());
    m.set("voxels", probe.voxels());
    m.write(dir / "manifest.txt");
}

LinearProbe load_probe(const std::filesystem::path& dir) {
    const Manifest m = Manifest::read(dir / "manifest.txt");
    const Tensor w = read_tensor(dir / "W.nst");
    const Tensor b = read_tensor(dir / "b.nst");
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(1) ||
        static_cast<long long>(w.dim(0)) != m.get_int("dim") ||
        static_cast<long long>(w.dim(1)) != m.get_int("voxels")) {
        throw InputError(dir.string() + ": probe tensors disagree with manifest");
    }
    LinearProbe p;
    p.weights = w.matrix().cast<double>();
    p.bias = Eigen::Map<const Eigen::RowVectorXf>(b.data().data(), static_cast<Eigen::Index>(b.size()))
                 .cast<double>();
    return p;
}

}  // namespace sail
