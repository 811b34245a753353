#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xproto/config.hpp"
#include "xproto/dataset.hpp"
#include "xproto/encoder.hpp"
#include "xproto/graph.hpp"
#include "xproto/prototypes.hpp"

namespace xproto {

// One row of the per-epoch training log. Components that are switched off in
// the config are absent from the CSV.
struct EpochLog {
    std::size_t epoch = 0;
    double cls = 0.0;
    double s2s = 0.0;
    double s2v = 0.0;
    double representation = 0.0;
    double adversarial = 0.0;
    std::size_t sinkhorn_iterations = 0;
};

struct TrainResult {
    EncoderHead head;
    std::vector<OptimizerState> optimizers;  // [representation, adversarial]
    PrototypeSet prototypes;
    std::vector<EpochLog> log;
    std::optional<double> best_validation_accuracy;
    std::size_t best_epoch = 0;
};

std::string log_csv_header(const TrainConfig& config);
std::string log_csv_row(const TrainConfig& config, const EpochLog& row);
void write_log_csv(std::ostream& out, const TrainConfig& config, const std::vector<EpochLog>& log);

// Source relations are matched to graph nodes by name.
GraphFeatures source_graph_features(const Dataset& source, const RelationGraph& graph,
                                    const EncoderHead& encoder, const TrainConfig& config, Rng& rng);

// The episodic training loop: per epoch, sample an episode, refresh the class
// means, Langevin-update the episode prototypes, take an optimizer step on the
// representation loss and, when use_wd is set, a second step on the
// Wasserstein loss between the support embeddings and an unlabeled target batch.
// `validation`, when given, is evaluated every valid_every epochs and the best
// head is kept. `log_sink`, when given, receives the CSV log as it is produced.
TrainResult train(const Dataset& source, const Dataset& target, const RelationGraph& graph,
                  const TrainConfig& config, const Dataset* validation = nullptr,
                  std::ostream* log_sink = nullptr);

// Target prototypes v_r = mean of the support embeddings of relation r, rows
// ordered by ascending relation id.
struct TargetPrototypes {
    std::vector<std::uint32_t> relations;
    Matrix v;
};

TargetPrototypes adapt(const EncoderHead& encoder, const std::vector<EmbeddedSample>& support);

// argmax_r x . v_r; ties go to the lowest relation id.
std::uint32_t predict(std::span<const double> query_embedding, const TargetPrototypes& prototypes);

struct EvalReport {
    double accuracy = 0.0;
    double ci95 = 0.0;  // normal-approximation half width over per-episode accuracies
    std::size_t episodes = 0;
    EpisodeSpec spec;
    std::uint64_t seed = 0;
    std::vector<double> episode_accuracy;

    nlohmann::json to_json() const;
};

EvalReport summarize(std::vector<double> episode_accuracy, const EpisodeSpec& spec, std::uint64_t seed);

// Episodes are drawn sequentially from `seed`, then scored on up to `workers`
// threads over the immutable encoder.
EvalReport evaluate(const EncoderHead& encoder, const Dataset& dataset, const EpisodeSpec& spec,
                    std::size_t episode_count, std::uint64_t seed, std::size_t workers = 0);

enum class AblationVariant { original, with_wd, with_con, with_both };

std::string variant_name(AblationVariant v);
TrainConfig apply_variant(TrainConfig config, AblationVariant v);

struct AblationCell {
    AblationVariant variant;
    EpisodeSpec spec;
    std::vector<double> seed_accuracy;
    EvalReport pooled;
    double mean() const;
};

struct AblationOptions {
    std::vector<EpisodeSpec> eval_specs{{5, 1, 1}};
    std::vector<std::uint64_t> seeds{1};
    std::size_t episodes = 1000;
    std::vector<AblationVariant> variants{AblationVariant::original, AblationVariant::with_wd,
                                          AblationVariant::with_con, AblationVariant::with_both};
};

struct AblationTable {
    std::vector<AblationCell> cells;  // variant-major, in `variants` order

    const AblationCell& at(AblationVariant v, const EpisodeSpec& spec) const;
};

AblationTable run_ablation(const Dataset& source, const Dataset& target, const RelationGraph& graph,
                           const TrainConfig& base, const AblationOptions& options);

void write_ablation_csv(std::ostream& out, const AblationTable& table);

struct SyntheticSpec {
    std::size_t source_classes = 12;
    std::size_t source_per_class = 100;
    std::size_t target_classes = 10;
    std::size_t target_per_class = 50;
    std::size_t dim = 32;
    double shift_norm = 2.0;
    std::optional<Vector> shift;  // explicit shift vector overrides shift_norm
    double noise = 0.05;          // per-coordinate std of the Gaussian blobs
    // Trailing coordinates that carry no class signal, only Gaussian noise of
    // this std (class centers are zero there).
    std::size_t nuisance_dims = 16;
    double nuisance_noise = 2.0;
    std::size_t graph_k = 10;     // clamped to source_classes - 1
    std::uint64_t seed = 1;
};

struct SyntheticData {
    Dataset source;
    Dataset target;
    RelationGraph graph;
    Matrix source_centers;
    Matrix target_centers;  // already translated by the shift
    Vector shift;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Fraction of target samples whose nearest (shifted) class center is their own.
double nearest_center_accuracy(const Dataset& dataset, const Matrix& centers);

}  // namespace xproto
