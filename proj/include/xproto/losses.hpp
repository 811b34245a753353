#pragma once

#include <span>
#include <string>
#include <vector>

#include "xproto/linalg.hpp"

namespace xproto {

// All loss math is done in f64. Labels index rows of the prototype matrix
// (i.e. positions in the episode's relation list R').

struct LossValue {
    double value = 0.0;
    std::vector<Vector> d_embeddings;  // one gradient per input embedding
};

// Cosine of the angle between x and y. Throws NumericError("undefined cosine")
// on a zero vector.
double cosine(std::span<const double> x, std::span<const double> y);

// d(x, y) = 1 / (1 + exp(cos(x, y))), in [1/(1+e), 1/(1+e^-1)].
double pair_distance(std::span<const double> x, std::span<const double> y);

// Gradients of cos(x, y) with respect to x and y.
void cosine_gradient(std::span<const double> x, std::span<const double> y, double& cos_xy,
                     Vector& d_x, Vector& d_y);

// Mean over samples of -log softmax_r(x . v_r) at the true label.
LossValue loss_cls(const std::vector<Vector>& embeddings, std::span<const std::size_t> labels,
                   const Matrix& prototypes);

// Denominator exponent of the sentence-to-sentence loss.
//   masked:  (1 - delta_ij) * d_ij   (zero for same-class pairs)
//   literal: 1 - delta_ij * d_ij
enum class S2sForm { masked, literal };

std::string to_string(S2sForm f);
S2sForm s2s_form_from_string(const std::string& s);

// (1/N^2) sum_{i,j} exp(delta_ij) / sum_j' exp(e_ij') over all ordered pairs
// including i = j, N = n_way.
LossValue loss_s2s(const std::vector<Vector>& support, std::span<const std::size_t> labels,
                   std::size_t n_way, S2sForm form = S2sForm::masked);

// (1/N^2) sum_r sum_i log dhat(v_r, x_i), dhat = d if r_i = r else 1 - d.
// N is the number of prototypes.
LossValue loss_s2v(const Matrix& prototypes, const std::vector<Vector>& support,
                   std::span<const std::size_t> labels);

enum class ClsOn { query, support, both };

std::string to_string(ClsOn c);
ClsOn cls_on_from_string(const std::string& s);

struct RepresentationLoss {
    double total = 0.0;
    double cls = 0.0;
    double s2s = 0.0;
    double s2v = 0.0;
    std::vector<Vector> d_query;
    std::vector<Vector> d_support;
};

struct RepresentationOptions {
    double rho = 0.6;
    bool use_con = true;  // false drops rho * (s2s + s2v) entirely
    ClsOn cls_on = ClsOn::query;
    S2sForm s2s_form = S2sForm::masked;
};

// L = L_cls + rho (L_s2s + L_s2v). Contrastive terms use the support set;
// L_cls uses the set selected by `cls_on`.
RepresentationLoss representation_loss(const std::vector<Vector>& query,
                                       std::span<const std::size_t> query_labels,
                                       const std::vector<Vector>& support,
                                       std::span<const std::size_t> support_labels,
                                       const Matrix& prototypes,
                                       const RepresentationOptions& options);

}  // namespace xproto
