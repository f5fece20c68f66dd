#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dglm/classifier.hpp"
#include "dglm/denoiser.hpp"
#include "dglm/diffusion.hpp"
#include "dglm/gmm.hpp"
#include "dglm/rng.hpp"

namespace dglm {

enum class McForm { loss_softmax, likelihood_mean };
enum class JacobianMode { full, scaled_identity };

McForm mc_form_from_string(const std::string& s);
JacobianMode jacobian_from_string(const std::string& s);

struct GuidanceConfig {
    double cfg_w = 1.0;
    double guidance_s = 0.0;
    int mc_n = 32;
    int steps = 50;
    McForm mc_form = McForm::loss_softmax;
    JacobianMode jacobian = JacobianMode::full;
    int target = 0;
    double v_interp = 0.2;
    double t_eps = 1e-3;

    void validate() const;
};

// One classifier/target pair; multiple pairs sum their losses.
struct GuidanceTarget {
    const LinearAttributeClassifier* clf = nullptr;
    int target = 0;
};

// Abstract denoiser seen by the sampler: either a learned v-prediction
// network or the exact GMM score adapted through Tweedie's identity.
class ProposalDenoiser {
public:
    virtual ~ProposalDenoiser() = default;
    virtual int dim() const = 0;
    virtual Eigen::VectorXd predict_v(const Eigen::VectorXd& z, double lambda,
                                      const Eigen::VectorXd* prefix) const = 0;
    // cot^T d(x_hat)/dz at the given noise level
    virtual Eigen::VectorXd xhat_vjp(const Eigen::VectorXd& z, double lambda,
                                     const Eigen::VectorXd* prefix,
                                     const Eigen::VectorXd& cot) const = 0;
};

class GmmScoreDenoiser : public ProposalDenoiser {
public:
    explicit GmmScoreDenoiser(const LabeledGmm& gmm) : gmm_(gmm) {}
    int dim() const override { return gmm_.dim(); }
    Eigen::VectorXd predict_v(const Eigen::VectorXd& z, double lambda,
                              const Eigen::VectorXd* prefix) const override;
    Eigen::VectorXd xhat_vjp(const Eigen::VectorXd& z, double lambda,
                             const Eigen::VectorXd* prefix,
                             const Eigen::VectorXd& cot) const override;

private:
    const LabeledGmm& gmm_;
};

class LearnedDenoiser : public ProposalDenoiser {
public:
    explicit LearnedDenoiser(DenoiserNet<float>& net) : net_(net) {}
    int dim() const override { return net_.cfg.dim; }
    Eigen::VectorXd predict_v(const Eigen::VectorXd& z, double lambda,
                              const Eigen::VectorXd* prefix) const override;
    Eigen::VectorXd xhat_vjp(const Eigen::VectorXd& z, double lambda,
                             const Eigen::VectorXd* prefix,
                             const Eigen::VectorXd& cot) const override;

private:
    DenoiserNet<float>& net_;
};

Prediction cfg_blend(const Prediction& cond, const Prediction& uncond, double w);

// MMSE clean-data estimate x_hat = alpha*z - sigma*v_hat.
Eigen::VectorXd dps_estimate(const ProposalDenoiser& denoiser, const LatentState& z,
                             const Eigen::VectorXd* prefix);

// Monte-Carlo smoothed guidance gradient in z-space (before the guidance
// scale s is applied). xi holds the n standard-normal perturbations.
Eigen::VectorXd mc_guidance_gradient_fixed(const ProposalDenoiser& denoiser,
                                           const std::vector<GuidanceTarget>& targets,
                                           const LatentState& z, const Eigen::VectorXd* prefix,
                                           const GuidanceConfig& cfg, const Eigen::MatrixXd& xi);

Eigen::VectorXd mc_guidance_gradient(const ProposalDenoiser& denoiser,
                                     const std::vector<GuidanceTarget>& targets,
                                     const LatentState& z, const Eigen::VectorXd* prefix,
                                     const GuidanceConfig& cfg, Rng& rng);

// Scalar aggregate objective whose negative z-gradient is the guidance term;
// finite-difference oracle hook for the full-Jacobian path.
double mc_guidance_objective(const ProposalDenoiser& denoiser,
                             const std::vector<GuidanceTarget>& targets, const LatentState& z,
                             const Eigen::VectorXd* prefix, const GuidanceConfig& cfg,
                             const Eigen::MatrixXd& xi);

// DDPM ancestral sampling with classifier-free guidance and optional
// plug-and-play guidance. Returns the final clean-data estimate.
Eigen::VectorXd sample(const ProposalDenoiser& denoiser, const Eigen::VectorXd* prefix,
                       const std::vector<GuidanceTarget>& targets, const GuidanceConfig& cfg,
                       const Schedule& schedule, Rng& rng);

}  // namespace dglm
