#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace dglm {

inline double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline double silu(double x) { return x * logistic(x); }

inline double silu_grad(double x) {
    double s = logistic(x);
    return s * (1.0 + x * (1.0 - s));
}

// Upper-tail p-value of a chi-squared statistic.
double chi_squared_pvalue(double stat, double dof);

// Two-sample chi-squared homogeneity test over count vectors.
double chi_squared_two_sample_pvalue(std::span<const long> a, std::span<const long> b);

}  // namespace dglm
