#include "dglm/numerics.hpp"

#include <stdexcept>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

namespace dglm {

double chi_squared_pvalue(double stat, double dof) {
    if (dof <= 0.0) throw std::invalid_argument("chi_squared_pvalue: dof must be positive");
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, std::max(0.0, stat)));
}

double chi_squared_two_sample_pvalue(std::span<const long> a, std::span<const long> b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("chi_squared_two_sample_pvalue: size mismatch");
    double na = 0.0, nb = 0.0;
    for (long x : a) na += x;
    for (long x : b) nb += x;
    if (na <= 0.0 || nb <= 0.0)
        throw std::invalid_argument("chi_squared_two_sample_pvalue: empty sample");
    double stat = 0.0;
    int cells = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double tot = a[i] + b[i];
        if (tot == 0.0) continue;  // category unused by both samples
        double ea = tot * na / (na + nb);
        double eb = tot * nb / (na + nb);
        stat += (a[i] - ea) * (a[i] - ea) / ea;
        stat += (b[i] - eb) * (b[i] - eb) / eb;
        ++cells;
    }
    if (cells < 2) return 1.0;
    return chi_squared_pvalue(stat, cells - 1);
}

}  // namespace dglm
