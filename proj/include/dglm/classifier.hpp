#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dglm {

// Multinomial logistic regression over clean embeddings. Supplies the
// guidance log-likelihood and its input gradient.
struct LinearAttributeClassifier {
    Eigen::MatrixXd W;  // classes x dim
    Eigen::VectorXd b;  // per class
    std::vector<std::string> class_names;

    int dim() const { return static_cast<int>(W.cols()); }
    int classes() const { return static_cast<int>(W.rows()); }

    Eigen::VectorXd logits(const Eigen::VectorXd& x) const;
    Eigen::VectorXd probs(const Eigen::VectorXd& x) const;

    // log p(y | x); the guidance loss is l_y = -log_prob.
    double log_prob(const Eigen::VectorXd& x, int y) const;

    // gradient of l_y with respect to x: W^T (softmax(Wx+b) - onehot(y))
    Eigen::VectorXd loss_grad_x(const Eigen::VectorXd& x, int y) const;

    int class_id(const std::string& name) const;

    void save(const std::string& path) const;
    static LinearAttributeClassifier load(const std::string& path);
};

struct FitOptions {
    double l2 = 1e-3;
    bool balanced = false;
    int max_iter = 1000;
    double grad_tol = 1e-6;
};

// Minimizes mean (weighted) cross-entropy + l2*||W||^2/2 with L-BFGS.
// Returns the objective value via *final_loss when non-null.
LinearAttributeClassifier fit_logistic(const Eigen::MatrixXd& X /* N x d */,
                                       const std::vector<int>& y, const FitOptions& opts = {},
                                       std::vector<std::string> class_names = {},
                                       double* final_loss = nullptr);

}  // namespace dglm
