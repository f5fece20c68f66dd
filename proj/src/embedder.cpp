#include "dglm/embedder.hpp"

#include <cmath>
#include <stdexcept>

namespace dglm {

Embedder::Embedder(int vocab, int d, uint64_t s) : vocab_size(vocab), dim(d), seed(s) {
    if (vocab < 1 || d < 1) throw std::invalid_argument("embedder: bad dimensions");
    Rng rng(s);
    proj.resize(d, vocab);
    for (int c = 0; c < vocab; ++c)
        for (int r = 0; r < d; ++r) proj(r, c) = rng.normal() / std::sqrt(static_cast<double>(d));
}

Eigen::VectorXd Embedder::embed(std::span<const int> tokens) const {
    if (tokens.empty()) throw std::invalid_argument("embedder: empty token list");
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(vocab_size);
    for (int t : tokens) {
        if (t < 0 || t >= vocab_size)
            throw std::invalid_argument("embedder: token id out of range");
        counts[t] += 1.0;
    }
    Eigen::VectorXd e = proj * counts;
    double norm = e.norm();
    if (norm == 0.0) throw std::runtime_error("embedder: degenerate zero embedding");
    // normalize to ||e|| = sqrt(dim) so per-dimension variance is ~1, the
    // scale the variance-preserving diffusion process assumes
    return e * (std::sqrt(static_cast<double>(dim)) / norm);
}

}  // namespace dglm
