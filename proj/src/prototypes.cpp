#include "xproto/prototypes.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "xproto/error.hpp"

namespace xproto {

void compute_means(const Dataset& dataset, const EncoderHead& encoder, const MeanOptions& options,
                   Matrix& class_means, Vector& global_mean) {
    const std::size_t d = encoder.d_out();
    class_means = Matrix(dataset.relation_count(), d);
    global_mean.assign(d, 0.0);
    std::size_t total = 0;
    for (std::uint32_t r = 0; r < dataset.relation_count(); ++r) {
        const auto& members = dataset.members(r);
        std::size_t take = members.size();
        if (options.max_per_relation > 0) take = std::min(take, options.max_per_relation);
        if (take == 0) {
            throw ValidationError("relation '" + dataset.relation_names()[r] +
                                  "' has no samples to form a prototype");
        }
        auto row = class_means.row(r);
        for (std::size_t i = 0; i < take; ++i) {
            const Vector x = encode(encoder, dataset.sample(members[i]).base_vector);
            axpy(1.0, x, row);
            axpy(1.0, x, global_mean);
        }
        for (double& v : row) v /= static_cast<double>(take);
        total += take;
    }
    for (double& v : global_mean) v /= static_cast<double>(total);
}

PrototypeSet init_prototypes(const Dataset& dataset, const GraphFeatures& features,
                             const EncoderHead& encoder, double prior_std,
                             const MeanOptions& options) {
    if (features.h.rows() != dataset.relation_count() || features.h.cols() != encoder.d_out()) {
        throw std::invalid_argument("init_prototypes: graph features do not match dataset/encoder");
    }
    if (!(prior_std > 0.0)) throw std::invalid_argument("init_prototypes: prior_std must be positive");
    PrototypeSet set;
    set.prior_std = prior_std;
    compute_means(dataset, encoder, options, set.class_means, set.global_mean);
    set.v = Matrix(dataset.relation_count(), encoder.d_out());
    for (std::size_t r = 0; r < set.v.rows(); ++r) {
        for (std::size_t c = 0; c < set.v.cols(); ++c) {
            set.v(r, c) = set.class_means(r, c) + features.h(r, c) - set.global_mean[c];
        }
    }
    return set;
}

void refresh_means(PrototypeSet& prototypes, const Dataset& dataset, const EncoderHead& encoder,
                   const MeanOptions& options) {
    Matrix means;
    Vector global;
    compute_means(dataset, encoder, options, means, global);
    for (std::size_t r = 0; r < prototypes.v.rows(); ++r) {
        for (std::size_t c = 0; c < prototypes.v.cols(); ++c) {
            prototypes.v(r, c) += (means(r, c) - prototypes.class_means(r, c)) -
                                  (global[c] - prototypes.global_mean[c]);
        }
    }
    prototypes.class_means = std::move(means);
    prototypes.global_mean = std::move(global);
}

namespace {

Vector logits_for(const Matrix& prototypes, std::span<const double> x) {
    Vector z(prototypes.rows());
    for (std::size_t r = 0; r < prototypes.rows(); ++r) z[r] = dot(x, prototypes.row(r));
    return z;
}

void check_labels(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                  std::span<const std::size_t> labels) {
    if (labels.size() != embeddings.size()) throw std::invalid_argument("label count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= prototypes.rows()) throw std::invalid_argument("label outside R'");
        if (embeddings[i].size() != prototypes.cols()) {
            throw std::invalid_argument("embedding/prototype dimension mismatch");
        }
    }
}

}  // namespace

double support_likelihood(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                          std::span<const std::size_t> labels) {
    check_labels(prototypes, embeddings, labels);
    double total = 0.0;
    for (std::size_t s = 0; s < embeddings.size(); ++s) {
        total += log_softmax(logits_for(prototypes, embeddings[s]))[labels[s]];
    }
    return total;
}

double log_posterior(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                     std::span<const std::size_t> labels, const Matrix& prior_means,
                     double prior_std) {
    double value = support_likelihood(prototypes, embeddings, labels);
    if (std::isfinite(prior_std)) {
        const double inv_var = 1.0 / (prior_std * prior_std);
        for (std::size_t r = 0; r < prototypes.rows(); ++r) {
            value -= 0.5 * inv_var * squared_distance(prototypes.row(r), prior_means.row(r));
        }
    }
    return value;
}

Matrix log_posterior_gradient(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                              std::span<const std::size_t> labels, const Matrix& prior_means,
                              double prior_std) {
    check_labels(prototypes, embeddings, labels);
    Matrix grad(prototypes.rows(), prototypes.cols());
    for (std::size_t s = 0; s < embeddings.size(); ++s) {
        const Vector p = softmax(logits_for(prototypes, embeddings[s]));
        for (std::size_t r = 0; r < prototypes.rows(); ++r) {
            const double coeff = (labels[s] == r ? 1.0 : 0.0) - p[r];
            axpy(coeff, embeddings[s], grad.row(r));
        }
    }
    if (std::isfinite(prior_std)) {
        const double inv_var = 1.0 / (prior_std * prior_std);
        for (std::size_t r = 0; r < prototypes.rows(); ++r) {
            for (std::size_t c = 0; c < prototypes.cols(); ++c) {
                grad(r, c) -= inv_var * (prototypes(r, c) - prior_means(r, c));
            }
        }
    }
    return grad;
}

Matrix gather_rows(const Matrix& m, std::span<const std::uint32_t> relations) {
    Matrix out(relations.size(), m.cols());
    for (std::size_t i = 0; i < relations.size(); ++i) {
        const auto src = m.row(relations[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

void langevin_update(PrototypeSet& prototypes, std::span<const std::uint32_t> relations,
                     const std::vector<Vector>& support_embeddings,
                     std::span<const std::size_t> labels, const GraphFeatures& features,
                     const LangevinConfig& config, Rng& rng) {
    if (!(config.step_size > 0.0)) throw std::invalid_argument("langevin: step size must be positive");
    for (auto r : relations) {
        if (r >= prototypes.v.rows()) throw std::invalid_argument("langevin: relation out of range");
    }
    Matrix v = gather_rows(prototypes.v, relations);
    const Matrix h = gather_rows(features.h, relations);
    const double eps = config.step_size;
    const double noise_scale = std::sqrt(eps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const Matrix grad = log_posterior_gradient(v, support_embeddings, labels, h, prototypes.prior_std);
        for (std::size_t i = 0; i < v.data().size(); ++i) {
            const double z = config.inject_noise ? rng.normal() : 0.0;
            v.data()[i] += 0.5 * eps * grad.data()[i] + noise_scale * z;
        }
        if (!v.all_finite()) {
            std::ostringstream msg;
            msg << "langevin update produced a non-finite prototype at step " << step
                << " (step size " << eps << ")";
            throw NumericError(msg.str());
        }
    }
    for (std::size_t i = 0; i < relations.size(); ++i) {
        const auto src = v.row(i);
        std::copy(src.begin(), src.end(), prototypes.v.row(relations[i]).begin());
    }
}

}  // namespace xproto
