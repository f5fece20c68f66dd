#pragma once

#include <string>
#include <vector>

#include "dglm/rng.hpp"

namespace dglm {

enum class ScheduleKind { cosine, scaled_cosine };

// Variance-preserving noise schedule. Maps diffusion time t in [0,1] to
// (alpha_t, sigma_t, lambda_t) with alpha^2 + sigma^2 = 1. The scaled-cosine
// variant shifts the log-SNR of the cosine base by -2*ln(shift); shift > 1
// moves mass toward higher noise, shift < 1 the other direction.
struct Schedule {
    ScheduleKind kind = ScheduleKind::cosine;
    double shift = 1.0;  // the s of the scaled-cosine construction
    double lambda_min = -15.0;
    double lambda_max = 15.0;

    struct AlphaSigma {
        double alpha;
        double sigma;
    };

    AlphaSigma alpha_sigma(double t) const;
    double lambda_of(double t) const;

    // Inverse of lambda_of on the unclamped interior, clamped to [0,1].
    double t_of_lambda(double lambda) const;

    void validate() const;

    static ScheduleKind kind_from_string(const std::string& s);
};

// Piecewise-constant importance sampler over log-SNR, driven by per-bin EMA
// of observed training loss. Draws are unbiased against uniform lambda
// sampling via the returned importance weight.
struct AdaptiveSamplerState {
    double lambda_min = -15.0;
    double lambda_max = 15.0;
    int bins = 64;
    double ema_decay = 0.99;
    double floor = 1e-3;  // epsilon-mass for empty bins
    std::vector<double> ema_loss;

    AdaptiveSamplerState() = default;
    AdaptiveSamplerState(double lo, double hi, int b, double decay = 0.99);

    struct Draw {
        double lambda;
        double importance_weight;
    };

    std::vector<double> bin_probs() const;
    int bin_of(double lambda) const;

    Draw sample(Rng& rng) const;
    void update(double lambda, double observed_loss);
};

}  // namespace dglm
