#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dglm/rng.hpp"

namespace dglm {

// Deterministic semantic embedder: bag-of-symbols counts through a fixed
// seeded Gaussian projection, unit-normalized. Order-invariant by
// construction.
struct Embedder {
    Eigen::MatrixXd proj;  // dim x vocab
    int vocab_size = 0;
    int dim = 64;
    uint64_t seed = 0;

    Embedder() = default;
    Embedder(int vocab, int d, uint64_t s);

    Eigen::VectorXd embed(std::span<const int> tokens) const;
};

}  // namespace dglm
