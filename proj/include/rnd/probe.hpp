#pragma once

#include <vector>

#include <Eigen/Core>

namespace rnd {

/// L2-regularized logistic regression fitted by Newton iterations.
class LogisticProbe {
public:
    explicit LogisticProbe(double ridge = 1e-3, int iterations = 30) : ridge_(ridge), iterations_(iterations) {}

    /// Rows of x are samples; y holds 0/1.
    void fit(const Eigen::MatrixXd& x, const std::vector<int>& y);

    Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const;
    /// Mean binary cross-entropy.
    double bce(const Eigen::MatrixXd& x, const std::vector<int>& y) const;
    double accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y) const;

    const Eigen::VectorXd& weights() const { return w_; }
    double bias() const { return b_; }

private:
    double ridge_;
    int iterations_;
    Eigen::VectorXd w_;
    double b_ = 0.0;
};

}  // namespace rnd
