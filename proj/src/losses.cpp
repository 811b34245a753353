#include "xproto/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "xproto/error.hpp"

namespace xproto {

double cosine(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("cosine: dimension mismatch");
    const double nx = norm(x);
    const double ny = norm(y);
    if (nx == 0.0 || ny == 0.0) throw NumericError("undefined cosine: zero-norm vector");
    return dot(x, y) / (nx * ny);
}

double pair_distance(std::span<const double> x, std::span<const double> y) {
    return 1.0 / (1.0 + std::exp(cosine(x, y)));
}

void cosine_gradient(std::span<const double> x, std::span<const double> y, double& cos_xy,
                     Vector& d_x, Vector& d_y) {
    const double nx = norm(x);
    const double ny = norm(y);
    if (nx == 0.0 || ny == 0.0) throw NumericError("undefined cosine: zero-norm vector");
    cos_xy = dot(x, y) / (nx * ny);
    d_x.resize(x.size());
    d_y.resize(y.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        d_x[k] = (y[k] / ny - cos_xy * x[k] / nx) / nx;
        d_y[k] = (x[k] / nx - cos_xy * y[k] / ny) / ny;
    }
}

namespace {

std::vector<Vector> zeros(const std::vector<Vector>& like) {
    std::vector<Vector> out;
    out.reserve(like.size());
    for (const auto& v : like) out.emplace_back(v.size(), 0.0);
    return out;
}

void check_inputs(const std::vector<Vector>& xs, std::span<const std::size_t> labels,
                  std::size_t classes) {
    if (xs.size() != labels.size()) throw std::invalid_argument("embedding/label count mismatch");
    for (auto l : labels) {
        if (l >= classes) throw std::invalid_argument("label outside the episode relations");
    }
}

}  // namespace

LossValue loss_cls(const std::vector<Vector>& embeddings, std::span<const std::size_t> labels,
                   const Matrix& prototypes) {
    check_inputs(embeddings, labels, prototypes.rows());
    LossValue out{0.0, zeros(embeddings)};
    if (embeddings.empty()) return out;
    const double inv_n = 1.0 / static_cast<double>(embeddings.size());
    Vector logits(prototypes.rows());
    for (std::size_t s = 0; s < embeddings.size(); ++s) {
        if (embeddings[s].size() != prototypes.cols()) {
            throw std::invalid_argument("loss_cls: dimension mismatch");
        }
        for (std::size_t r = 0; r < prototypes.rows(); ++r) logits[r] = dot(embeddings[s], prototypes.row(r));
        const Vector logp = log_softmax(logits);
        out.value -= inv_n * logp[labels[s]];
        for (std::size_t r = 0; r < prototypes.rows(); ++r) {
            const double coeff = std::exp(logp[r]) - (labels[s] == r ? 1.0 : 0.0);
            axpy(inv_n * coeff, prototypes.row(r), out.d_embeddings[s]);
        }
    }
    return out;
}

std::string to_string(S2sForm f) { return f == S2sForm::masked ? "masked" : "literal"; }

S2sForm s2s_form_from_string(const std::string& s) {
    if (s == "masked") return S2sForm::masked;
    if (s == "literal") return S2sForm::literal;
    throw std::invalid_argument("unknown s2s form '" + s + "'");
}

LossValue loss_s2s(const std::vector<Vector>& support, std::span<const std::size_t> labels,
                   std::size_t n_way, S2sForm form) {
    if (support.size() < 2) throw std::invalid_argument("loss_s2s: needs at least 2 support samples");
    if (n_way == 0) throw std::invalid_argument("loss_s2s: n_way must be positive");
    if (support.size() != labels.size()) throw std::invalid_argument("loss_s2s: label count mismatch");
    const std::size_t n = support.size();
    const double scale = 1.0 / static_cast<double>(n_way * n_way);

    for (const auto& x : support) {
        if (norm(x) == 0.0) throw NumericError("undefined cosine: zero-norm vector");
    }

    // Exponent e_ij and its derivative with respect to d_ij.
    Matrix cos_table(n, n);
    Matrix expo(n, n);
    Matrix de_dd(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double c = i == j ? 1.0 : cosine(support[i], support[j]);
            cos_table(i, j) = c;
            const double d = 1.0 / (1.0 + std::exp(c));
            const double delta = labels[i] == labels[j] ? 1.0 : 0.0;
            if (form == S2sForm::masked) {
                expo(i, j) = (1.0 - delta) * d;
                de_dd(i, j) = 1.0 - delta;
            } else {
                expo(i, j) = 1.0 - delta * d;
                de_dd(i, j) = -delta;
            }
        }
    }

    LossValue out{0.0, zeros(support)};
    Vector gx;
    Vector gy;
    for (std::size_t i = 0; i < n; ++i) {
        double numer = 0.0;
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            numer += std::exp(labels[i] == labels[j] ? 1.0 : 0.0);
            denom += std::exp(expo(i, j));
        }
        out.value += scale * numer / denom;

        // dL/dd_ij' = -scale * numer / denom^2 * exp(e_ij') * de/dd, and dd/dc = -d (1 - d).
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || de_dd(i, j) == 0.0) continue;
            const double d = 1.0 / (1.0 + std::exp(cos_table(i, j)));
            const double dl_dd = -scale * numer / (denom * denom) * std::exp(expo(i, j)) * de_dd(i, j);
            const double dl_dc = dl_dd * (-d * (1.0 - d));
            double c = 0.0;
            cosine_gradient(support[i], support[j], c, gx, gy);
            axpy(dl_dc, gx, out.d_embeddings[i]);
            axpy(dl_dc, gy, out.d_embeddings[j]);
        }
    }
    return out;
}

LossValue loss_s2v(const Matrix& prototypes, const std::vector<Vector>& support,
                   std::span<const std::size_t> labels) {
    check_inputs(support, labels, prototypes.rows());
    const std::size_t n_way = prototypes.rows();
    const double scale = 1.0 / static_cast<double>(n_way * n_way);
    LossValue out{0.0, zeros(support)};
    Vector gv;
    Vector gx;
    for (std::size_t r = 0; r < n_way; ++r) {
        if (norm(prototypes.row(r)) == 0.0) throw NumericError("undefined cosine: zero-norm prototype");
        for (std::size_t i = 0; i < support.size(); ++i) {
            double c = 0.0;
            cosine_gradient(prototypes.row(r), support[i], c, gv, gx);
            const double d = 1.0 / (1.0 + std::exp(c));
            double dl_dc;
            if (labels[i] == r) {
                out.value += scale * std::log(d);
                dl_dc = -scale * (1.0 - d);
            } else {
                out.value += scale * std::log(1.0 - d);
                dl_dc = scale * d;
            }
            axpy(dl_dc, gx, out.d_embeddings[i]);
        }
    }
    return out;
}

std::string to_string(ClsOn c) {
    switch (c) {
        case ClsOn::query: return "query";
        case ClsOn::support: return "support";
        case ClsOn::both: return "both";
    }
    return "query";
}

ClsOn cls_on_from_string(const std::string& s) {
    if (s == "query") return ClsOn::query;
    if (s == "support") return ClsOn::support;
    if (s == "both") return ClsOn::both;
    throw std::invalid_argument("unknown cls-on value '" + s + "'");
}

RepresentationLoss representation_loss(const std::vector<Vector>& query,
                                       std::span<const std::size_t> query_labels,
                                       const std::vector<Vector>& support,
                                       std::span<const std::size_t> support_labels,
                                       const Matrix& prototypes,
                                       const RepresentationOptions& options) {
    if (options.rho < 0.0) throw std::invalid_argument("representation_loss: rho must be non-negative");
    RepresentationLoss out;
    out.d_query = zeros(query);
    out.d_support = zeros(support);

    switch (options.cls_on) {
        case ClsOn::query: {
            if (query.empty()) throw std::invalid_argument("representation_loss: cls on an empty query set");
            auto cls = loss_cls(query, query_labels, prototypes);
            out.cls = cls.value;
            out.d_query = std::move(cls.d_embeddings);
            break;
        }
        case ClsOn::support: {
            auto cls = loss_cls(support, support_labels, prototypes);
            out.cls = cls.value;
            out.d_support = std::move(cls.d_embeddings);
            break;
        }
        case ClsOn::both: {
            // One mean over the union of both sets.
            std::vector<Vector> all = support;
            all.insert(all.end(), query.begin(), query.end());
            std::vector<std::size_t> labels(support_labels.begin(), support_labels.end());
            labels.insert(labels.end(), query_labels.begin(), query_labels.end());
            auto cls = loss_cls(all, labels, prototypes);
            out.cls = cls.value;
            for (std::size_t i = 0; i < support.size(); ++i) out.d_support[i] = cls.d_embeddings[i];
            for (std::size_t i = 0; i < query.size(); ++i) out.d_query[i] = cls.d_embeddings[support.size() + i];
            break;
        }
    }
    out.total = out.cls;

    if (options.use_con && options.rho > 0.0) {
        const auto s2s = loss_s2s(support, support_labels, prototypes.rows(), options.s2s_form);
        const auto s2v = loss_s2v(prototypes, support, support_labels);
        out.s2s = s2s.value;
        out.s2v = s2v.value;
        out.total += options.rho * (s2s.value + s2v.value);
        for (std::size_t i = 0; i < support.size(); ++i) {
            axpy(options.rho, s2s.d_embeddings[i], out.d_support[i]);
            axpy(options.rho, s2v.d_embeddings[i], out.d_support[i]);
        }
    }
    return out;
}

}  // namespace xproto
