#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xproto/linalg.hpp"
#include "xproto/rng.hpp"

namespace xproto {

struct GraphEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    double weight = 0.0;

    friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

// k-NN graph over source relations. Edges are stored grouped by `from`, each
// group ordered nearest first.
struct RelationGraph {
    std::vector<std::string> relation_names;
    Matrix transe;  // |R| x d_g
    std::vector<GraphEdge> edges;
    std::size_t k = 0;

    std::size_t relation_count() const { return transe.rows(); }
    std::size_t dim() const { return transe.cols(); }

    // Throws ValidationError unless every node has exactly k outgoing edges,
    // no self loops, and finite non-negative weights.
    void validate() const;
};

// Links each relation to its k nearest neighbours by Euclidean distance, ties
// broken by lower index. Weight exp(-d^2 / tau), tau the median squared
// neighbour distance (weights are 1 when tau is 0).
RelationGraph build_knn_graph(std::vector<std::string> relation_names, Matrix transe,
                              std::size_t k);

// graph.json + transe.f32. Edges in graph.json are optional; they are rebuilt
// from the vectors when absent and validated when present.
RelationGraph load_graph(const std::filesystem::path& dir);
void save_graph(const RelationGraph& graph, const std::filesystem::path& dir, bool with_edges);

// Fixed affine map from graph space (d_g) into embedding space (d_out).
struct AffineMap {
    Matrix weight;  // d_out x d_g
    Vector bias;

    Vector apply(std::span<const double> x) const;
    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

AffineMap random_projection(std::size_t d_g, std::size_t d_out, Rng& rng);

// Ridge regression of targets on inputs (rows paired). Solved in the dual,
// so it is cheap when there are fewer rows than input dimensions.
AffineMap fit_projection(const Matrix& inputs, const Matrix& targets, double ridge);

// (t_r + sum_j w_rj t_j) / (1 + sum_j w_rj) for every node.
Matrix aggregate_neighbours(const RelationGraph& graph);

struct GraphFeatures {
    Matrix h;  // one row per relation
};

GraphFeatures graph_features(const RelationGraph& graph, const AffineMap& projection);

// Reorders graph rows to follow `names`. Throws ValidationError if a name is
// missing from the graph.
Matrix align_rows(const Matrix& rows, const std::vector<std::string>& row_names,
                  const std::vector<std::string>& names);

}  // namespace xproto
