#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dglm/rng.hpp"

namespace dglm {

// Labeled diagonal Gaussian mixture with closed-form diffused scores and
// class posteriors. Ground truth for sampler and guidance checks.
struct LabeledGmm {
    std::vector<double> weights;            // pi_k, sums to 1
    std::vector<Eigen::VectorXd> means;     // mu_k
    std::vector<Eigen::VectorXd> diag_vars; // per-component variances, > 0
    std::vector<int> labels;                // class id per component

    int dim() const;
    int components() const { return static_cast<int>(weights.size()); }
    int num_classes() const;
    void validate() const;

    // log density of the diffused marginal sum_k pi_k N(alpha*mu_k, alpha^2*v_k + sigma^2)
    double log_density(const Eigen::VectorXd& z, double alpha, double sigma) const;

    // exact score of the diffused marginal
    Eigen::VectorXd score(const Eigen::VectorXd& z, double alpha, double sigma) const;

    // Hessian-vector product of the diffused log density (symmetric, so this
    // is also the score-Jacobian VJP).
    Eigen::VectorXd score_vjp(const Eigen::VectorXd& z, double alpha, double sigma,
                              const Eigen::VectorXd& cot) const;

    std::pair<Eigen::VectorXd, int> sample(Rng& rng) const;

    Eigen::VectorXd class_posterior(const Eigen::VectorXd& x) const;

    std::string to_text() const;
    static LabeledGmm from_text(const std::string& text);
    static LabeledGmm from_file(const std::string& path);
    void save(const std::string& path) const;
};

// Exact Bayes class posterior as a linear softmax model. Requires one
// component per class with a shared diagonal covariance.
void bayes_linear_weights(const LabeledGmm& gmm, Eigen::MatrixXd& W, Eigen::VectorXd& b);

}  // namespace dglm
