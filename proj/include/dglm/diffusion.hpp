#pragma once

#include <string>

#include <Eigen/Dense>

#include "dglm/schedule.hpp"

namespace dglm {

// A noisy latent z_t together with its time and log-SNR.
struct LatentState {
    Eigen::VectorXd z;
    double t = 0.0;
    double lambda = 0.0;

    double alpha() const;
    double sigma() const;
};

enum class PredKind { eps, x0, v, score };

struct Prediction {
    PredKind kind;
    Eigen::VectorXd value;
};

PredKind pred_kind_from_string(const std::string& s);

LatentState forward_diffuse(const Eigen::VectorXd& x, double t, const Eigen::VectorXd& eps,
                            const Schedule& schedule);

// Converts between the eps/x0/v/score parameterizations at the latent's noise
// level, using v = alpha*eps - sigma*x and score = -eps/sigma.
Prediction convert(const Prediction& pred, const LatentState& z, PredKind target);

enum class WeightKind { lognormal, hybrid_cauchy_normal };

// Log-SNR loss weighting, normalized so w(0) = 1.
struct WeightingFn {
    WeightKind kind = WeightKind::hybrid_cauchy_normal;
    double scale = 2.4;

    double operator()(double lambda) const;

    static WeightKind kind_from_string(const std::string& s);
};

double dsm_v_loss(const Prediction& v_hat, const Eigen::VectorXd& x, const Eigen::VectorXd& eps,
                  const LatentState& z, const WeightingFn& wfn);

struct PosteriorStep {
    Eigen::VectorXd mean;
    double step_sigma;
};

// DDPM ancestral step coefficients q(z_s | z_t, x_hat) with log-interpolated
// step variance between the two textbook bounds.
PosteriorStep posterior_step_params(const LatentState& z_t, const Prediction& x_hat, double t_next,
                                    double v_interp, const Schedule& schedule);

}  // namespace dglm
