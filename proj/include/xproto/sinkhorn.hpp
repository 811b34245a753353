#pragma once

#include <span>
#include <vector>

#include "xproto/linalg.hpp"

namespace xproto {

// M_ij = |x_i - y_j|^2.
Matrix cost_matrix(const std::vector<Vector>& source, const std::vector<Vector>& target);

struct SinkhornConfig {
    // Entropic regularisation. When `relative` is set the solver uses
    // regularization * mean(M), recomputed for every cost matrix.
    double regularization = 0.05;
    bool relative = true;
    std::size_t max_iterations = 10000;
    double marginal_tolerance = 1e-9;
    // Solve a geometric sequence of larger regularisations first (warm-starting
    // the potentials). Only kicks in when the target is below `anneal_above`
    // times mean(M).
    bool anneal = true;
    double anneal_above = 0.02;
};

struct TransportPlan {
    Matrix entries;
    Vector a;
    Vector b;
};

struct SinkhornResult {
    double value = 0.0;  // <P, M>
    TransportPlan plan;
    double lambda = 0.0;
    std::size_t iterations = 0;
    double marginal_violation = 0.0;  // sum_i |row_i - a_i| after the last column update
    bool converged = false;
};

// Log-domain Sinkhorn iterations for min <P, M> - lambda H(P) over couplings of
// a and b. Non-convergence is reported through `converged`, never thrown.
SinkhornResult sinkhorn(const Matrix& cost, std::span<const double> a, std::span<const double> b,
                        const SinkhornConfig& config);

// Uniform marginals 1/n_s and 1/n_t.
SinkhornResult sinkhorn_uniform(const Matrix& cost, const SinkhornConfig& config);

struct AdversarialLoss {
    double value = 0.0;
    std::vector<Vector> d_source;
    std::vector<Vector> d_target;
    SinkhornResult solve;
};

// Wasserstein distance between the two batches with the plan held fixed for
// the gradient: d/dx_i = sum_j P_ij 2 (x_i - y_j), d/dy_j = sum_i P_ij 2 (y_j - x_i).
AdversarialLoss adversarial_loss(const std::vector<Vector>& source,
                                 const std::vector<Vector>& target, const SinkhornConfig& config);

// Exact optimal transport for square costs with uniform marginals, by brute
// force over all n! permutations (n <= 8).
double exact_ot_oracle(const Matrix& cost);

}  // namespace xproto
