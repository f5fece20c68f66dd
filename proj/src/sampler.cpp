#include "dglm/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "dglm/numerics.hpp"

namespace dglm {

McForm mc_form_from_string(const std::string& s) {
    if (s == "loss_softmax") return McForm::loss_softmax;
    if (s == "likelihood_mean") return McForm::likelihood_mean;
    throw std::invalid_argument("unknown mc_form '" + s + "'");
}

JacobianMode jacobian_from_string(const std::string& s) {
    if (s == "full") return JacobianMode::full;
    if (s == "scaled_identity") return JacobianMode::scaled_identity;
    throw std::invalid_argument("unknown jacobian mode '" + s + "'");
}

void GuidanceConfig::validate() const {
    if (mc_n < 1) throw std::invalid_argument("guidance: mc_n must be >= 1");
    if (steps < 1) throw std::invalid_argument("guidance: steps must be >= 1");
    if (cfg_w < 0.0 || guidance_s < 0.0)
        throw std::invalid_argument("guidance: weights must be non-negative");
}

Eigen::VectorXd GmmScoreDenoiser::predict_v(const Eigen::VectorXd& z, double lambda,
                                            const Eigen::VectorXd*) const {
    double alpha = std::sqrt(logistic(lambda));
    double sigma = std::sqrt(logistic(-lambda));
    Eigen::VectorXd score = gmm_.score(z, alpha, sigma);
    // Tweedie: x_hat = (z + sigma^2 score)/alpha, then v = (alpha z - x_hat)/sigma
    Eigen::VectorXd x_hat = (z + sigma * sigma * score) / alpha;
    return (alpha * z - x_hat) / sigma;
}

Eigen::VectorXd GmmScoreDenoiser::xhat_vjp(const Eigen::VectorXd& z, double lambda,
                                           const Eigen::VectorXd*,
                                           const Eigen::VectorXd& cot) const {
    double alpha = std::sqrt(logistic(lambda));
    double sigma = std::sqrt(logistic(-lambda));
    // J = (I + sigma^2 H)/alpha, H symmetric
    return (cot + sigma * sigma * gmm_.score_vjp(z, alpha, sigma, cot)) / alpha;
}

Eigen::VectorXd LearnedDenoiser::predict_v(const Eigen::VectorXd& z, double lambda,
                                           const Eigen::VectorXd* prefix) const {
    Eigen::VectorXf zf = z.cast<float>();
    Eigen::VectorXf pf;
    if (prefix) pf = prefix->cast<float>();
    return net_.predict_v(zf, prefix ? &pf : nullptr, lambda).cast<double>();
}

Eigen::VectorXd LearnedDenoiser::xhat_vjp(const Eigen::VectorXd& z, double lambda,
                                          const Eigen::VectorXd* prefix,
                                          const Eigen::VectorXd& cot) const {
    double alpha = std::sqrt(logistic(lambda));
    double sigma = std::sqrt(logistic(-lambda));
    Eigen::VectorXf zf = z.cast<float>();
    Eigen::VectorXf pf;
    if (prefix) pf = prefix->cast<float>();
    Eigen::VectorXf cotf = cot.cast<float>();
    // x_hat = alpha z - sigma v_hat(z)
    Eigen::VectorXd dv =
        net_.vjp_v_wrt_z(zf, prefix ? &pf : nullptr, lambda, cotf).cast<double>();
    return alpha * cot - sigma * dv;
}

Prediction cfg_blend(const Prediction& cond, const Prediction& uncond, double w) {
    if (cond.kind != uncond.kind) throw std::invalid_argument("cfg_blend: kind mismatch");
    if (cond.value.size() != uncond.value.size())
        throw std::invalid_argument("cfg_blend: dimension mismatch");
    return {cond.kind, w * cond.value + (1.0 - w) * uncond.value};
}

Eigen::VectorXd dps_estimate(const ProposalDenoiser& denoiser, const LatentState& z,
                             const Eigen::VectorXd* prefix) {
    double sigma = z.sigma();
    if (sigma <= 0.0) throw std::domain_error("dps_estimate: sigma must be positive");
    Eigen::VectorXd v_hat = denoiser.predict_v(z.z, z.lambda, prefix);
    return z.alpha() * z.z - sigma * v_hat;
}

namespace {

double total_loss(const std::vector<GuidanceTarget>& targets, const Eigen::VectorXd& x) {
    double l = 0.0;
    for (const auto& t : targets) l += -t.clf->log_prob(x, t.target);
    return l;
}

Eigen::VectorXd total_loss_grad(const std::vector<GuidanceTarget>& targets,
                                const Eigen::VectorXd& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    for (const auto& t : targets) g += t.clf->loss_grad_x(x, t.target);
    return g;
}

// Aggregate gradient in x-space at the MMSE estimate. loss_softmax follows
// the printed objective -grad log mean exp(+loss); likelihood_mean averages
// likelihoods, -grad log mean exp(-loss). The sign convention: the returned
// vector already points toward higher target likelihood.
Eigen::VectorXd aggregate_x_gradient(const std::vector<GuidanceTarget>& targets,
                                     const Eigen::VectorXd& x_hat, const GuidanceConfig& cfg,
                                     const Eigen::MatrixXd& xi, double spread) {
    const int n = cfg.mc_n;
    const int d = static_cast<int>(x_hat.size());
    std::vector<double> losses(n);
    std::vector<Eigen::VectorXd> grads(n);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd xs = x_hat;
        if (n > 1) xs += spread * xi.row(i).transpose();
        losses[i] = total_loss(targets, xs);
        grads[i] = total_loss_grad(targets, xs);
    }
    std::vector<double> logits(n);
    double sign = cfg.mc_form == McForm::loss_softmax ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) logits[i] = sign * losses[i];
    double lse = log_sum_exp(logits);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) g -= std::exp(logits[i] - lse) * grads[i];
    return g;
}

}  // namespace

double mc_guidance_objective(const ProposalDenoiser& denoiser,
                             const std::vector<GuidanceTarget>& targets, const LatentState& z,
                             const Eigen::VectorXd* prefix, const GuidanceConfig& cfg,
                             const Eigen::MatrixXd& xi) {
    double alpha = z.alpha();
    double sigma = z.sigma();
    Eigen::VectorXd x_hat = dps_estimate(denoiser, z, prefix);
    double spread = sigma / alpha;
    const int n = cfg.mc_n;
    std::vector<double> logits(n);
    double sign = cfg.mc_form == McForm::loss_softmax ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd xs = x_hat;
        if (n > 1) xs += spread * xi.row(i).transpose();
        logits[i] = sign * total_loss(targets, xs);
    }
    // objective whose negative gradient is the guidance term
    return sign * (log_sum_exp(logits) - std::log(static_cast<double>(n)));
}

Eigen::VectorXd mc_guidance_gradient_fixed(const ProposalDenoiser& denoiser,
                                           const std::vector<GuidanceTarget>& targets,
                                           const LatentState& z, const Eigen::VectorXd* prefix,
                                           const GuidanceConfig& cfg, const Eigen::MatrixXd& xi) {
    cfg.validate();
    if (targets.empty()) throw std::invalid_argument("mc_guidance: no guidance targets");
    for (const auto& t : targets)
        if (!t.clf || t.clf->dim() != denoiser.dim())
            throw std::invalid_argument("mc_guidance: classifier dimension mismatch");
    double alpha = z.alpha();
    double sigma = z.sigma();
    if (sigma <= 0.0 || alpha <= 0.0)
        throw std::domain_error("mc_guidance: degenerate noise level");

    Eigen::VectorXd x_hat = dps_estimate(denoiser, z, prefix);
    Eigen::VectorXd g_x = aggregate_x_gradient(targets, x_hat, cfg, xi, sigma / alpha);
    if (cfg.jacobian == JacobianMode::scaled_identity) return alpha * g_x;
    return denoiser.xhat_vjp(z.z, z.lambda, prefix, g_x);
}

Eigen::VectorXd mc_guidance_gradient(const ProposalDenoiser& denoiser,
                                     const std::vector<GuidanceTarget>& targets,
                                     const LatentState& z, const Eigen::VectorXd* prefix,
                                     const GuidanceConfig& cfg, Rng& rng) {
    Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(cfg.mc_n, z.z.size());
    if (cfg.mc_n > 1)
        for (int i = 0; i < cfg.mc_n; ++i)
            for (int j = 0; j < z.z.size(); ++j) xi(i, j) = rng.normal();
    return mc_guidance_gradient_fixed(denoiser, targets, z, prefix, cfg, xi);
}

Eigen::VectorXd sample(const ProposalDenoiser& denoiser, const Eigen::VectorXd* prefix,
                       const std::vector<GuidanceTarget>& targets, const GuidanceConfig& cfg,
                       const Schedule& schedule, Rng& rng) {
    cfg.validate();
    const int d = denoiser.dim();
    const bool guided = cfg.guidance_s > 0.0 && !targets.empty();

    LatentState state;
    state.t = 1.0;
    state.lambda = schedule.lambda_of(1.0);
    state.z = rng.normal_vec(d);

    Eigen::VectorXd x_hat;
    for (int i = 0; i < cfg.steps; ++i) {
        double t = 1.0 - i * (1.0 - cfg.t_eps) / cfg.steps;
        double t_next = 1.0 - (i + 1) * (1.0 - cfg.t_eps) / cfg.steps;
        state.t = t;
        state.lambda = schedule.lambda_of(t);
        double alpha = state.alpha();
        double sigma = state.sigma();

        Prediction v{PredKind::v, Eigen::VectorXd()};
        if (prefix && cfg.cfg_w != 1.0) {
            Prediction cond{PredKind::v, denoiser.predict_v(state.z, state.lambda, prefix)};
            Prediction uncond{PredKind::v, denoiser.predict_v(state.z, state.lambda, nullptr)};
            v = cfg_blend(cond, uncond, cfg.cfg_w);
        } else {
            v.value = denoiser.predict_v(state.z, state.lambda, prefix);
        }
        x_hat = alpha * state.z - sigma * v.value;

        if (guided) {
            Eigen::VectorXd g_z = mc_guidance_gradient(denoiser, targets, state, prefix, cfg, rng);
            // Tweedie shift of x_hat by the scaled guidance score
            x_hat += (sigma * sigma / alpha) * (cfg.guidance_s * g_z);
        }

        if (i == cfg.steps - 1) break;  // final step: return the mean estimate, no noise
        PosteriorStep step =
            posterior_step_params(state, {PredKind::x0, x_hat}, t_next, cfg.v_interp, schedule);
        state.z = step.mean + step.step_sigma * rng.normal_vec(d);
    }
    return x_hat;
}

}  // namespace dglm
