#include "dglm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "dglm/numerics.hpp"

namespace dglm {

double LatentState::alpha() const { return std::sqrt(logistic(lambda)); }
double LatentState::sigma() const { return std::sqrt(logistic(-lambda)); }

PredKind pred_kind_from_string(const std::string& s) {
    if (s == "eps") return PredKind::eps;
    if (s == "x0") return PredKind::x0;
    if (s == "v") return PredKind::v;
    if (s == "score") return PredKind::score;
    throw std::invalid_argument("unknown prediction kind '" + s + "'");
}

LatentState forward_diffuse(const Eigen::VectorXd& x, double t, const Eigen::VectorXd& eps,
                            const Schedule& schedule) {
    if (x.size() != eps.size()) throw std::invalid_argument("forward_diffuse: dimension mismatch");
    auto [alpha, sigma] = schedule.alpha_sigma(t);
    LatentState state;
    state.z = alpha * x + sigma * eps;
    state.t = t;
    state.lambda = schedule.lambda_of(t);
    return state;
}

Prediction convert(const Prediction& pred, const LatentState& z, PredKind target) {
    if (pred.value.size() != z.z.size())
        throw std::invalid_argument("convert: dimension mismatch");
    double alpha = z.alpha();
    double sigma = z.sigma();

    // go through the (x, eps) pair
    Eigen::VectorXd x, eps;
    switch (pred.kind) {
        case PredKind::v:
            x = alpha * z.z - sigma * pred.value;
            eps = sigma * z.z + alpha * pred.value;
            break;
        case PredKind::eps:
            eps = pred.value;
            x = (z.z - sigma * eps) / alpha;
            break;
        case PredKind::x0:
            x = pred.value;
            eps = (z.z - alpha * x) / sigma;
            break;
        case PredKind::score:
            eps = -sigma * pred.value;
            x = (z.z - sigma * eps) / alpha;
            break;
    }

    Prediction out;
    out.kind = target;
    switch (target) {
        case PredKind::v:
            out.value = alpha * eps - sigma * x;
            break;
        case PredKind::eps:
            out.value = eps;
            break;
        case PredKind::x0:
            out.value = x;
            break;
        case PredKind::score:
            if (sigma == 0.0) throw std::domain_error("convert: score undefined at sigma=0");
            out.value = -eps / sigma;
            break;
    }
    return out;
}

WeightKind WeightingFn::kind_from_string(const std::string& s) {
    if (s == "lognormal") return WeightKind::lognormal;
    if (s == "hybrid" || s == "hybrid_cauchy_normal") return WeightKind::hybrid_cauchy_normal;
    throw std::invalid_argument("unknown weighting '" + s + "'");
}

double WeightingFn::operator()(double lambda) const {
    double gauss = std::exp(-lambda * lambda / (2.0 * scale * scale));
    if (kind == WeightKind::lognormal) return gauss;
    if (lambda < 0.0) {
        double r = lambda / scale;
        return 1.0 / (1.0 + r * r);
    }
    return gauss;
}

double dsm_v_loss(const Prediction& v_hat, const Eigen::VectorXd& x, const Eigen::VectorXd& eps,
                  const LatentState& z, const WeightingFn& wfn) {
    if (v_hat.kind != PredKind::v) throw std::invalid_argument("dsm_v_loss: prediction must be v");
    if (v_hat.value.size() != x.size() || x.size() != eps.size())
        throw std::invalid_argument("dsm_v_loss: dimension mismatch");
    double alpha = z.alpha();
    double sigma = z.sigma();
    Eigen::VectorXd v_true = alpha * eps - sigma * x;
    return wfn(z.lambda) * (v_hat.value - v_true).squaredNorm();
}

PosteriorStep posterior_step_params(const LatentState& z_t, const Prediction& x_hat, double t_next,
                                    double v_interp, const Schedule& schedule) {
    if (x_hat.kind != PredKind::x0)
        throw std::invalid_argument("posterior_step_params: prediction must be x0");
    if (!(t_next < z_t.t)) throw std::invalid_argument("posterior_step_params: t_next must be < t");
    double alpha_t = z_t.alpha();
    double sigma_t = z_t.sigma();
    if (sigma_t == 0.0) throw std::domain_error("posterior_step_params: sigma_t = 0");
    auto [alpha_s, sigma_s] = schedule.alpha_sigma(t_next);

    double alpha_ts = alpha_t / alpha_s;
    double sig2_ts = sigma_t * sigma_t - alpha_ts * alpha_ts * sigma_s * sigma_s;
    sig2_ts = std::max(sig2_ts, 0.0);
    double sig2_t = sigma_t * sigma_t;

    PosteriorStep step;
    step.mean = (alpha_ts * sigma_s * sigma_s / sig2_t) * z_t.z +
                (alpha_s * sig2_ts / sig2_t) * x_hat.value;
    double sig2_min = sig2_ts * sigma_s * sigma_s / sig2_t;
    double sig2_max = sig2_ts;
    double log_sig2 = v_interp * std::log(sig2_max) + (1.0 - v_interp) * std::log(sig2_min);
    step.step_sigma = std::sqrt(std::exp(log_sig2));
    return step;
}

}  // namespace dglm
