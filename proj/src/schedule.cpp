#include "dglm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dglm/numerics.hpp"

namespace dglm {

void Schedule::validate() const {
    if (shift <= 0.0) throw std::invalid_argument("schedule: shift must be positive");
    if (!(lambda_min < lambda_max))
        throw std::invalid_argument("schedule: lambda_min must be below lambda_max");
}

ScheduleKind Schedule::kind_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "scaled_cosine") return ScheduleKind::scaled_cosine;
    throw std::invalid_argument("schedule: unknown kind '" + s + "'");
}

namespace {

// Raw cosine log-SNR before shift/clamp; +-inf at the endpoints.
double raw_cosine_lambda(double t) {
    if (t <= 0.0) return std::numeric_limits<double>::infinity();
    if (t >= 1.0) return -std::numeric_limits<double>::infinity();
    double c = std::cos(M_PI * t / 2.0);
    double s = std::sin(M_PI * t / 2.0);
    return 2.0 * (std::log(c) - std::log(s));
}

}  // namespace

double Schedule::lambda_of(double t) const {
    if (t < 0.0 || t > 1.0) throw std::domain_error("schedule: t outside [0,1]");
    double lam = raw_cosine_lambda(t);
    if (kind == ScheduleKind::scaled_cosine) lam -= 2.0 * std::log(shift);
    return std::clamp(lam, lambda_min, lambda_max);
}

Schedule::AlphaSigma Schedule::alpha_sigma(double t) const {
    double lam = lambda_of(t);
    double a2 = logistic(lam);
    double s2 = logistic(-lam);
    return {std::sqrt(a2), std::sqrt(s2)};
}

double Schedule::t_of_lambda(double lambda) const {
    double base = lambda;
    if (kind == ScheduleKind::scaled_cosine) base += 2.0 * std::log(shift);
    double alpha = std::sqrt(logistic(base));
    double t = (2.0 / M_PI) * std::acos(std::clamp(alpha, 0.0, 1.0));
    return std::clamp(t, 0.0, 1.0);
}

AdaptiveSamplerState::AdaptiveSamplerState(double lo, double hi, int b, double decay)
    : lambda_min(lo), lambda_max(hi), bins(b), ema_decay(decay), ema_loss(b, 1.0) {
    if (b < 1) throw std::invalid_argument("adaptive sampler: need at least one bin");
    if (!(lo < hi)) throw std::invalid_argument("adaptive sampler: bad lambda range");
    if (!(decay > 0.0 && decay < 1.0))
        throw std::invalid_argument("adaptive sampler: decay must be in (0,1)");
}

std::vector<double> AdaptiveSamplerState::bin_probs() const {
    std::vector<double> p(ema_loss.size());
    double total = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        p[i] = std::max(ema_loss[i], floor);
        total += p[i];
    }
    for (double& x : p) x /= total;
    return p;
}

int AdaptiveSamplerState::bin_of(double lambda) const {
    double width = (lambda_max - lambda_min) / bins;
    int b = static_cast<int>(std::floor((lambda - lambda_min) / width));
    return std::clamp(b, 0, bins - 1);
}

AdaptiveSamplerState::Draw AdaptiveSamplerState::sample(Rng& rng) const {
    std::vector<double> p = bin_probs();
    int b = rng.categorical(p);
    double width = (lambda_max - lambda_min) / bins;
    double lambda = lambda_min + (b + rng.uniform()) * width;
    // density f = p_b / width; uniform density = 1 / range
    double weight = 1.0 / (bins * p[b]);
    return {lambda, weight};
}

void AdaptiveSamplerState::update(double lambda, double observed_loss) {
    if (observed_loss < 0.0) throw std::invalid_argument("adaptive sampler: negative loss");
    int b = bin_of(lambda);
    ema_loss[b] = ema_decay * ema_loss[b] + (1.0 - ema_decay) * observed_loss;
}

}  // namespace dglm
