#include "xproto/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace xproto {

Matrix cost_matrix(const std::vector<Vector>& source, const std::vector<Vector>& target) {
    Matrix m(source.size(), target.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
        for (std::size_t j = 0; j < target.size(); ++j) {
            if (source[i].size() != target[j].size()) {
                throw std::invalid_argument("cost_matrix: dimension mismatch");
            }
            m(i, j) = squared_distance(source[i], target[j]);
        }
    }
    return m;
}

namespace {

double mean_entry(const Matrix& m) {
    if (m.empty()) return 0.0;
    return std::accumulate(m.data().begin(), m.data().end(), 0.0) / static_cast<double>(m.data().size());
}

struct Potentials {
    Vector f;
    Vector g;
};

// Iterates at fixed lambda until the row marginals are within tolerance.
// Returns (iterations, final violation).
std::pair<std::size_t, double> iterate(const Matrix& cost, std::span<const double> a,
                                       std::span<const double> b, double lambda,
                                       std::size_t max_iterations, double tolerance, Potentials& pot) {
    const std::size_t ns = cost.rows();
    const std::size_t nt = cost.cols();
    Vector log_a(ns);
    Vector log_b(nt);
    for (std::size_t i = 0; i < ns; ++i) log_a[i] = std::log(a[i]);
    for (std::size_t j = 0; j < nt; ++j) log_b[j] = std::log(b[j]);

    Vector scratch(std::max(ns, nt));
    auto lse = [&](std::size_t count) {
        const double mx = *std::max_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(count));
        double s = 0.0;
        for (std::size_t k = 0; k < count; ++k) s += std::exp(scratch[k] - mx);
        return mx + std::log(s);
    };

    double violation = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    while (it < max_iterations) {
        ++it;
        for (std::size_t i = 0; i < ns; ++i) {
            for (std::size_t j = 0; j < nt; ++j) scratch[j] = (pot.g[j] - cost(i, j)) / lambda;
            pot.f[i] = lambda * (log_a[i] - lse(nt));
        }
        for (std::size_t j = 0; j < nt; ++j) {
            for (std::size_t i = 0; i < ns; ++i) scratch[i] = (pot.f[i] - cost(i, j)) / lambda;
            pot.g[j] = lambda * (log_b[j] - lse(ns));
        }
        violation = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < nt; ++j) row += std::exp((pot.f[i] + pot.g[j] - cost(i, j)) / lambda);
            violation += std::abs(row - a[i]);
        }
        if (violation < tolerance) break;
    }
    return {it, violation};
}

}  // namespace

SinkhornResult sinkhorn(const Matrix& cost, std::span<const double> a, std::span<const double> b,
                        const SinkhornConfig& config) {
    const std::size_t ns = cost.rows();
    const std::size_t nt = cost.cols();
    if (ns == 0 || nt == 0) throw std::invalid_argument("sinkhorn: empty cost matrix");
    if (a.size() != ns || b.size() != nt) throw std::invalid_argument("sinkhorn: marginal size mismatch");
    if (!(config.regularization > 0.0)) throw std::invalid_argument("sinkhorn: regularization must be positive");
    for (double v : a) {
        if (!(v > 0.0)) throw std::invalid_argument("sinkhorn: marginals must be strictly positive");
    }
    for (double v : b) {
        if (!(v > 0.0)) throw std::invalid_argument("sinkhorn: marginals must be strictly positive");
    }

    const double mean_cost = mean_entry(cost);
    double lambda = config.regularization;
    if (config.relative && mean_cost > 0.0) lambda *= mean_cost;

    SinkhornResult result;
    result.lambda = lambda;
    Potentials pot{Vector(ns, 0.0), Vector(nt, 0.0)};

    if (config.anneal && mean_cost > 0.0 && lambda < config.anneal_above * mean_cost) {
        const double loose = std::max(config.marginal_tolerance, 1e-4);
        for (double stage = mean_cost; stage > lambda; stage *= 0.5) {
            const auto [it, viol] = iterate(cost, a, b, stage, config.max_iterations, loose, pot);
            result.iterations += it;
            (void)viol;
        }
    }
    const auto [it, viol] = iterate(cost, a, b, lambda, config.max_iterations, config.marginal_tolerance, pot);
    result.iterations += it;
    result.marginal_violation = viol;
    result.converged = viol < config.marginal_tolerance;

    result.plan.a.assign(a.begin(), a.end());
    result.plan.b.assign(b.begin(), b.end());
    result.plan.entries = Matrix(ns, nt);
    double value = 0.0;
    for (std::size_t i = 0; i < ns; ++i) {
        for (std::size_t j = 0; j < nt; ++j) {
            const double p = std::exp((pot.f[i] + pot.g[j] - cost(i, j)) / lambda);
            result.plan.entries(i, j) = p;
            value += p * cost(i, j);
        }
    }
    result.value = value;
    return result;
}

SinkhornResult sinkhorn_uniform(const Matrix& cost, const SinkhornConfig& config) {
    const Vector a(cost.rows(), 1.0 / static_cast<double>(cost.rows()));
    const Vector b(cost.cols(), 1.0 / static_cast<double>(cost.cols()));
    return sinkhorn(cost, a, b, config);
}

AdversarialLoss adversarial_loss(const std::vector<Vector>& source,
                                 const std::vector<Vector>& target, const SinkhornConfig& config) {
    if (source.empty() || target.empty()) throw std::invalid_argument("adversarial_loss: empty batch");
    AdversarialLoss out;
    out.solve = sinkhorn_uniform(cost_matrix(source, target), config);
    out.value = out.solve.value;
    const Matrix& p = out.solve.plan.entries;
    out.d_source.assign(source.size(), Vector(source.front().size(), 0.0));
    out.d_target.assign(target.size(), Vector(target.front().size(), 0.0));
    for (std::size_t i = 0; i < source.size(); ++i) {
        for (std::size_t j = 0; j < target.size(); ++j) {
            const double w = 2.0 * p(i, j);
            for (std::size_t k = 0; k < source[i].size(); ++k) {
                const double diff = source[i][k] - target[j][k];
                out.d_source[i][k] += w * diff;
                out.d_target[j][k] -= w * diff;
            }
        }
    }
    return out;
}

double exact_ot_oracle(const Matrix& cost) {
    const std::size_t n = cost.rows();
    if (cost.cols() != n) throw std::invalid_argument("exact_ot_oracle: cost must be square");
    if (n == 0) throw std::invalid_argument("exact_ot_oracle: empty cost");
    if (n > 8) throw std::invalid_argument("exact_ot_oracle: n > 8 is not supported");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += cost(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(n);
}

}  // namespace xproto
