#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

#include <Eigen/Dense>

namespace dglm {

// Deterministic random stream. Gaussian draws use Box-Muller on raw 53-bit
// uniforms so sequences are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::VectorXd normal_vec(int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    int uniform_int(int n) {
        // rejection-free is fine here; bias is ~2^-53
        int k = static_cast<int>(uniform() * n);
        return k >= n ? n - 1 : k;
    }

    int categorical(std::span<const double> probs) {
        double u = uniform();
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    // Independent child stream, stable under the parent's draw order.
    Rng derive(uint64_t stream) const {
        uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27; x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace dglm
