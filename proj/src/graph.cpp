#include "xproto/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "xproto/binary_io.hpp"
#include "xproto/error.hpp"

namespace xproto {

namespace fs = std::filesystem;
using nlohmann::json;

void RelationGraph::validate() const {
    if (relation_names.size() != transe.rows()) {
        throw ValidationError("graph: " + std::to_string(relation_names.size()) + " names for " +
                              std::to_string(transe.rows()) + " vectors");
    }
    if (!transe.all_finite()) throw ValidationError("graph: non-finite relation vector");
    std::vector<std::size_t> degree(relation_count(), 0);
    for (const auto& e : edges) {
        if (e.from >= relation_count() || e.to >= relation_count()) {
            throw ValidationError("graph: edge endpoint out of range");
        }
        if (e.from == e.to) throw ValidationError("graph: self loop at node " + std::to_string(e.from));
        if (!std::isfinite(e.weight) || e.weight < 0.0) {
            throw ValidationError("graph: invalid edge weight");
        }
        ++degree[e.from];
    }
    for (std::size_t r = 0; r < degree.size(); ++r) {
        if (degree[r] != k) {
            throw ValidationError("graph: node " + std::to_string(r) + " has degree " +
                                  std::to_string(degree[r]) + ", expected " + std::to_string(k));
        }
    }
}

RelationGraph build_knn_graph(std::vector<std::string> relation_names, Matrix transe,
                              std::size_t k) {
    const std::size_t n = transe.rows();
    if (k == 0) throw std::invalid_argument("build_knn_graph: k must be positive");
    if (k >= n) {
        throw std::invalid_argument("build_knn_graph: k=" + std::to_string(k) + " requires more than " +
                                    std::to_string(k) + " relations, got " + std::to_string(n));
    }
    if (relation_names.size() != n) throw std::invalid_argument("build_knn_graph: name count mismatch");

    RelationGraph graph;
    graph.k = k;
    std::vector<double> neighbour_d2;
    neighbour_d2.reserve(n * k);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) cand.emplace_back(squared_distance(transe.row(i), transe.row(j)), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t m = 0; m < k; ++m) {
            graph.edges.push_back({i, cand[m].second, 0.0});
            neighbour_d2.push_back(cand[m].first);
        }
    }

    std::vector<double> sorted = neighbour_d2;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    const double tau = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        graph.edges[e].weight = tau > 0.0 ? std::exp(-neighbour_d2[e] / tau) : 1.0;
    }

    graph.relation_names = std::move(relation_names);
    graph.transe = std::move(transe);
    return graph;
}

RelationGraph load_graph(const fs::path& dir) {
    const fs::path meta_path = dir / "graph.json";
    const fs::path vec_path = dir / "transe.f32";
    for (const auto& p : {meta_path, vec_path}) {
        if (!fs::exists(p)) throw ValidationError("missing file: " + p.string());
    }
    json meta;
    std::vector<std::string> names;
    std::size_t dim = 0;
    std::size_t k = 0;
    try {
        std::ifstream in(meta_path);
        meta = json::parse(in);
        names = meta.at("relations").get<std::vector<std::string>>();
        dim = meta.at("dim").get<std::size_t>();
        k = meta.at("k").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ValidationError("graph.json: " + std::string(e.what()));
    }
    if (dim == 0) throw ValidationError("graph.json: dim must be positive");

    const auto bytes = read_file_bytes(vec_path);
    if (bytes.size() != names.size() * dim * 4) {
        throw ValidationError("transe.f32: byte-count mismatch");
    }
    Matrix transe(names.size(), dim);
    transe.data() = decode_f32(bytes);

    if (!meta.contains("edges")) {
        if (k >= names.size()) throw ValidationError("graph.json: k must be less than the relation count");
        auto graph = build_knn_graph(std::move(names), std::move(transe), k);
        graph.validate();
        return graph;
    }
    RelationGraph graph;
    graph.relation_names = std::move(names);
    graph.transe = std::move(transe);
    graph.k = k;
    try {
        for (const auto& e : meta.at("edges")) {
            graph.edges.push_back(
                {e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
        }
    } catch (const json::exception& e) {
        throw ValidationError("graph.json edges: " + std::string(e.what()));
    }
    graph.validate();
    return graph;
}

void save_graph(const RelationGraph& graph, const fs::path& dir, bool with_edges) {
    fs::create_directories(dir);
    json meta;
    meta["relations"] = graph.relation_names;
    meta["dim"] = graph.dim();
    meta["k"] = graph.k;
    if (with_edges) {
        meta["edges"] = json::array();
        for (const auto& e : graph.edges) {
            meta["edges"].push_back(json::array({e.from, e.to, e.weight}));
        }
    }
    {
        std::ofstream out(dir / "graph.json", std::ios::binary | std::ios::trunc);
        out << meta.dump(2) << '\n';
        if (!out) throw std::runtime_error("failed to write graph.json");
    }
    write_file_bytes(dir / "transe.f32", encode_f32(graph.transe.data()));
}

Vector AffineMap::apply(std::span<const double> x) const {
    if (x.size() != in_dim()) {
        throw std::invalid_argument("projection: dimension mismatch (" + std::to_string(x.size()) +
                                    " != " + std::to_string(in_dim()) + ")");
    }
    Vector out(bias);
    for (std::size_t r = 0; r < out_dim(); ++r) out[r] += dot(weight.row(r), x);
    return out;
}

AffineMap random_projection(std::size_t d_g, std::size_t d_out, Rng& rng) {
    AffineMap map{Matrix(d_out, d_g), Vector(d_out, 0.0)};
    const double limit = std::sqrt(6.0 / static_cast<double>(d_g + d_out));
    for (double& w : map.weight.data()) w = rng.uniform(-limit, limit);
    return map;
}

namespace {

// Solves (A) X = B in place for symmetric positive definite A (n x n), B (n x m).
void cholesky_solve(Matrix a, Matrix& b) {
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t p = 0; p < j; ++p) d -= a(j, p) * a(j, p);
        if (!(d > 0.0)) throw NumericError("fit_projection: system is not positive definite");
        a(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t p = 0; p < j; ++p) s -= a(i, p) * a(j, p);
            a(i, j) = s / a(j, j);
        }
    }
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b(i, c);
            for (std::size_t p = 0; p < i; ++p) s -= a(i, p) * b(p, c);
            b(i, c) = s / a(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = b(ii, c);
            for (std::size_t p = ii + 1; p < n; ++p) s -= a(p, ii) * b(p, c);
            b(ii, c) = s / a(ii, ii);
        }
    }
}

}  // namespace

AffineMap fit_projection(const Matrix& inputs, const Matrix& targets, double ridge) {
    const std::size_t n = inputs.rows();
    if (n == 0 || targets.rows() != n) throw std::invalid_argument("fit_projection: row mismatch");
    if (!(ridge > 0.0)) throw std::invalid_argument("fit_projection: ridge must be positive");
    const std::size_t d_g = inputs.cols();
    const std::size_t d_out = targets.cols();

    Vector in_mean(d_g, 0.0);
    Vector out_mean(d_out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        axpy(1.0 / static_cast<double>(n), inputs.row(r), in_mean);
        axpy(1.0 / static_cast<double>(n), targets.row(r), out_mean);
    }
    Matrix xc(n, d_g);
    Matrix yc(n, d_out);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d_g; ++c) xc(r, c) = inputs(r, c) - in_mean[c];
        for (std::size_t c = 0; c < d_out; ++c) yc(r, c) = targets(r, c) - out_mean[c];
    }

    // W = Yc^T (Xc Xc^T + ridge I)^-1 Xc
    Matrix gram(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            gram(i, j) = gram(j, i) = dot(xc.row(i), xc.row(j));
        }
        gram(i, i) += ridge;
    }
    Matrix alpha = xc;  // (n x d_g) <- gram^-1 Xc
    cholesky_solve(gram, alpha);

    AffineMap map{Matrix(d_out, d_g), Vector(d_out, 0.0)};
    for (std::size_t o = 0; o < d_out; ++o) {
        for (std::size_t c = 0; c < d_g; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += yc(r, o) * alpha(r, c);
            map.weight(o, c) = s;
        }
        map.bias[o] = out_mean[o] - dot(map.weight.row(o), in_mean);
    }
    return map;
}

Matrix aggregate_neighbours(const RelationGraph& graph) {
    const std::size_t n = graph.relation_count();
    Matrix sum = graph.transe;
    Vector total(n, 1.0);
    for (const auto& e : graph.edges) {
        axpy(e.weight, graph.transe.row(e.to), sum.row(e.from));
        total[e.from] += e.weight;
    }
    for (std::size_t r = 0; r < n; ++r) {
        for (double& v : sum.row(r)) v /= total[r];
    }
    return sum;
}

GraphFeatures graph_features(const RelationGraph& graph, const AffineMap& projection) {
    if (projection.in_dim() != graph.dim()) {
        throw std::invalid_argument("graph_features: projection expects dim " +
                                    std::to_string(projection.in_dim()) + ", graph has " +
                                    std::to_string(graph.dim()));
    }
    const Matrix agg = aggregate_neighbours(graph);
    GraphFeatures out{Matrix(graph.relation_count(), projection.out_dim())};
    for (std::size_t r = 0; r < agg.rows(); ++r) {
        const Vector h = projection.apply(agg.row(r));
        std::copy(h.begin(), h.end(), out.h.row(r).begin());
    }
    return out;
}

Matrix align_rows(const Matrix& rows, const std::vector<std::string>& row_names,
                  const std::vector<std::string>& names) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < row_names.size(); ++i) index.emplace(row_names[i], i);
    Matrix out(names.size(), rows.cols());
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto it = index.find(names[i]);
        if (it == index.end()) {
            throw ValidationError("relation '" + names[i] + "' is not in the relation graph");
        }
        const auto src = rows.row(it->second);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace xproto
