#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "fairsinkhorn/contrastive.hpp"
#include "fairsinkhorn/rng.hpp"
#include "fairsinkhorn/sinkhorn.hpp"

namespace fairsinkhorn::testing {

// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_error(double got, double want) {
    const double denom = std::max(std::abs(want), 1e-12);
    return std::abs(got - want) / denom;
}

// Vector-level relative error: ||got - want|| / max(||want||, floor).
inline double rel_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
    return (got - want).norm() / std::max(want.norm(), 1e-12);
}

inline double rel_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
    return (got - want).norm() / std::max(want.norm(), 1e-12);
}

// Random distribution with support in [-1, 1] (the cosine range).
inline EmpiricalDistribution random_distribution(Rng& rng, Eigen::Index size,
                                                 bool equal_weights = true) {
    Eigen::VectorXd support(size);
    for (Eigen::Index i = 0; i < size; ++i) support[i] = rng.uniform(-1.0, 1.0);
    if (equal_weights) return EmpiricalDistribution::uniform(std::move(support));
    Eigen::VectorXd weights(size);
    double total = 0.0;
    for (Eigen::Index i = 0; i < size; ++i) {
        weights[i] = rng.uniform(0.1, 1.0);
        total += weights[i];
    }
    weights /= total;
    // Renormalize exactly: push rounding slack into the largest weight.
    Eigen::Index argmax = 0;
    weights.maxCoeff(&argmax);
    weights[argmax] += 1.0 - weights.sum();
    EmpiricalDistribution dist{std::move(support), std::move(weights)};
    dist.validate();
    return dist;
}

// Random batch of raw (unnormalized) embeddings with entries in [-1, 1].
inline EmbeddingBatch random_batch(Rng& rng, Eigen::Index n, Eigen::Index d) {
    EmbeddingBatch batch;
    batch.image_embeddings.resize(n, d);
    batch.text_embeddings.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            batch.image_embeddings(i, j) = rng.uniform(-1.0, 1.0);
            batch.text_embeddings(i, j) = rng.uniform(-1.0, 1.0);
        }
    }
    batch.already_normalized = false;
    return batch;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                     double lo = -1.0, double hi = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    }
    return m;
}

} // namespace fairsinkhorn::testing
