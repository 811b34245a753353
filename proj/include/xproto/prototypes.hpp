#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xproto/dataset.hpp"
#include "xproto/encoder.hpp"
#include "xproto/graph.hpp"
#include "xproto/linalg.hpp"
#include "xproto/rng.hpp"

namespace xproto {

// Prototype v_r for every relation of the source dataset (row = relation id),
// together with the class means and global mean they were initialised from.
struct PrototypeSet {
    Matrix v;
    Matrix class_means;
    Vector global_mean;
    double prior_std = 1.0;
};

// Which source samples feed the class and global means. `max_per_relation`
// of zero means every sample.
struct MeanOptions {
    std::size_t max_per_relation = 0;
};

// Encodes the source samples and fills class_means and global_mean.
void compute_means(const Dataset& dataset, const EncoderHead& encoder, const MeanOptions& options,
                   Matrix& class_means, Vector& global_mean);

// v_r = m_r + h_r - m, with `features.h` aligned to the dataset's relation ids.
PrototypeSet init_prototypes(const Dataset& dataset, const GraphFeatures& features,
                             const EncoderHead& encoder, double prior_std = 1.0,
                             const MeanOptions& options = {});

// Recomputes the means under the current encoder and shifts each v_r by the
// change in (m_r - m), preserving whatever the Langevin steps contributed.
void refresh_means(PrototypeSet& prototypes, const Dataset& dataset, const EncoderHead& encoder,
                   const MeanOptions& options = {});

// sum_s log softmax_r(x_s . v_r) at the sample's label. `labels` index rows of `prototypes`.
double support_likelihood(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                          std::span<const std::size_t> labels);

// Likelihood plus the Gaussian prior sum_r -|v_r - h_r|^2 / (2 sigma^2).
// An infinite sigma drops the prior.
double log_posterior(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                     std::span<const std::size_t> labels, const Matrix& prior_means, double prior_std);

// sum_s [1(r_s = r) - p(r | x_s)] x_s - (v_r - h_r) / sigma^2, one row per prototype.
Matrix log_posterior_gradient(const Matrix& prototypes, const std::vector<Vector>& embeddings,
                              std::span<const std::size_t> labels, const Matrix& prior_means,
                              double prior_std);

struct LangevinConfig {
    double step_size = 0.1;  // epsilon
    std::size_t steps = 1;
    bool inject_noise = true;  // false sets the Gaussian noise term to zero
};

// Runs `steps` iterations of v <- v + (eps/2) grad log p + sqrt(eps) z on the rows of
// `relations` only; all other prototypes are left as they are. `labels` index `relations`.
// Throws NumericError if an update leaves a non-finite value.
void langevin_update(PrototypeSet& prototypes, std::span<const std::uint32_t> relations,
                     const std::vector<Vector>& support_embeddings,
                     std::span<const std::size_t> labels, const GraphFeatures& features,
                     const LangevinConfig& config, Rng& rng);

// Rows of `m` selected by `relations`, in that order.
Matrix gather_rows(const Matrix& m, std::span<const std::uint32_t> relations);

}  // namespace xproto
