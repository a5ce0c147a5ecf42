#include "rnd/probe.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "rnd/errors.hpp"

namespace rnd {

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

void LogisticProbe::fit(const Eigen::MatrixXd& x, const std::vector<int>& y) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (n == 0 || static_cast<std::size_t>(n) != y.size()) throw InputError("probe: feature/label count mismatch");
    // Augmented design [x, 1]; the bias is not regularized.
    Eigen::MatrixXd a(n, d + 1);
    a.leftCols(d) = x;
    a.col(d).setOnes();
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t(i) = y[static_cast<std::size_t>(i)];
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
    Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, ridge_ * static_cast<double>(n));
    reg(d) = 1e-9;
    for (int it = 0; it < iterations_; ++it) {
        const Eigen::VectorXd z = a * theta;
        Eigen::VectorXd p(n), wdiag(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = sigmoid(z(i));
            wdiag(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
        }
        const Eigen::VectorXd grad = a.transpose() * (p - t) + reg.cwiseProduct(theta);
        Eigen::MatrixXd hess = a.transpose() * wdiag.asDiagonal() * a;
        hess.diagonal() += reg;
        const Eigen::VectorXd delta = hess.ldlt().solve(grad);
        theta -= delta;
        if (delta.norm() < 1e-10) break;
    }
    w_ = theta.head(d);
    b_ = theta(d);
}

Eigen::VectorXd LogisticProbe::predict_proba(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd z = x * w_;
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i) + b_);
    return z;
}

double LogisticProbe::bce(const Eigen::MatrixXd& x, const std::vector<int>& y) const {
    const Eigen::VectorXd p = predict_proba(x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p(i), 1e-12, 1.0 - 1e-12);
        total -= y[static_cast<std::size_t>(i)] ? std::log(q) : std::log(1.0 - q);
    }
    return total / static_cast<double>(p.size());
}

double LogisticProbe::accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y) const {
    const Eigen::VectorXd p = predict_proba(x);
    int correct = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) correct += (p(i) >= 0.5) == (y[static_cast<std::size_t>(i)] == 1);
    return static_cast<double>(correct) / static_cast<double>(p.size());
}

}  // namespace rnd
