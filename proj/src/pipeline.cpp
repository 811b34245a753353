#include "xproto/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "xproto/binary_io.hpp"
#include "xproto/error.hpp"
#include "xproto/log.hpp"
#include "xproto/losses.hpp"
#include "xproto/sinkhorn.hpp"

namespace xproto {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<Vector> base_vectors(const std::vector<EmbeddedSample>& samples) {
    std::vector<Vector> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.base_vector);
    return out;
}

std::vector<std::size_t> local_labels(const std::vector<EmbeddedSample>& samples,
                                      const std::vector<std::uint32_t>& relations) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto it = std::find(relations.begin(), relations.end(), s.relation_id);
        if (it == relations.end()) throw std::logic_error("episode sample outside R'");
        out.push_back(static_cast<std::size_t>(it - relations.begin()));
    }
    return out;
}

void accumulate(const EncoderHead& head, const std::vector<Vector>& bases,
                const std::vector<Vector>& upstream, GradBuffer& grads) {
    for (std::size_t i = 0; i < bases.size(); ++i) backward(head, bases[i], upstream[i], grads);
}

}  // namespace

std::string log_csv_header(const TrainConfig& config) {
    std::string h = "epoch,cls";
    if (config.use_con) h += ",s2s,s2v,representation";
    if (config.use_wd) h += ",adversarial,sinkhorn_iterations";
    return h;
}

std::string log_csv_row(const TrainConfig& config, const EpochLog& row) {
    std::string s = std::to_string(row.epoch) + "," + fmt_double(row.cls);
    if (config.use_con) {
        s += "," + fmt_double(row.s2s) + "," + fmt_double(row.s2v) + "," + fmt_double(row.representation);
    }
    if (config.use_wd) s += "," + fmt_double(row.adversarial) + "," + std::to_string(row.sinkhorn_iterations);
    return s;
}

void write_log_csv(std::ostream& out, const TrainConfig& config, const std::vector<EpochLog>& log) {
    out << log_csv_header(config) << '\n';
    for (const auto& row : log) out << log_csv_row(config, row) << '\n';
}

GraphFeatures source_graph_features(const Dataset& source, const RelationGraph& graph,
                                    const EncoderHead& encoder, const TrainConfig& config, Rng& rng) {
    const Matrix aggregated = align_rows(aggregate_neighbours(graph), graph.relation_names,
                                         source.relation_names());
    AffineMap projection;
    if (config.projection == ProjectionInit::fit) {
        Matrix means;
        Vector global;
        compute_means(source, encoder, {config.means_max_per_relation}, means, global);
        projection = fit_projection(aggregated, means, config.projection_ridge);
    } else {
        projection = random_projection(graph.dim(), encoder.d_out(), rng);
    }
    GraphFeatures features{Matrix(aggregated.rows(), encoder.d_out())};
    for (std::size_t r = 0; r < aggregated.rows(); ++r) {
        const Vector h = projection.apply(aggregated.row(r));
        std::copy(h.begin(), h.end(), features.h.row(r).begin());
    }
    return features;
}

TrainResult train(const Dataset& source, const Dataset& target, const RelationGraph& graph,
                  const TrainConfig& config, const Dataset* validation, std::ostream* log_sink) {
    config.validate();
    if (source.domain() != Domain::source) throw ValidationError("train: --source is not a source-domain dataset");
    if (config.use_wd && target.domain() != Domain::target) {
        throw ValidationError("train: --target is not a target-domain dataset");
    }
    if (config.use_wd && target.dim() != source.dim()) {
        throw ValidationError("train: source and target embedding dimensions differ");
    }
    if (config.use_wd && config.target_batch > target.size()) {
        throw ValidationError("train: target_batch exceeds the target dataset size");
    }

    Rng master(config.seed);
    Rng init_rng(master.split());
    const std::uint64_t sampler_seed = master.split();
    Rng langevin_rng(master.split());
    Rng target_rng(master.split());
    const std::uint64_t valid_seed = master.split();

    TrainResult result;
    result.head = EncoderHead::initialize(source.dim(), config.d_out, config.activation, init_rng);
    result.optimizers = {OptimizerState::make(config.optimizer, config.learning_rate, result.head),
                         OptimizerState::make(config.optimizer, config.learning_rate, result.head)};
    EncoderHead& head = result.head;
    OptimizerState& rep_opt = result.optimizers[0];
    OptimizerState& adv_opt = result.optimizers[1];

    const GraphFeatures features = source_graph_features(source, graph, head, config, init_rng);
    const MeanOptions mean_options{config.means_max_per_relation};
    result.prototypes = init_prototypes(source, features, head, config.prior_std, mean_options);
    PrototypeSet& protos = result.prototypes;

    RepresentationOptions rep_options;
    rep_options.rho = config.rho;
    rep_options.use_con = config.use_con;
    rep_options.cls_on = config.cls_on;
    rep_options.s2s_form = config.s2s_form;

    EpisodeSampler sampler(source, config.episode, sampler_seed);
    GradBuffer grads = GradBuffer::zeros_like(head);
    bool head_changed = false;
    std::optional<EncoderHead> best_head;

    if (log_sink) *log_sink << log_csv_header(config) << '\n';

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        try {
            const Episode ep = sampler.next();
            const auto support_base = base_vectors(ep.support);
            const auto query_base = base_vectors(ep.query);
            const auto support_labels = local_labels(ep.support, ep.relations);
            const auto query_labels = local_labels(ep.query, ep.relations);

            if (head_changed && (epoch - 1) % config.means_refresh_every == 0) {
                refresh_means(protos, source, head, mean_options);
                head_changed = false;
            }
            if (config.reinit_prototypes) {
                for (auto r : ep.relations) {
                    for (std::size_t c = 0; c < protos.v.cols(); ++c) {
                        protos.v(r, c) = protos.class_means(r, c) + features.h(r, c) - protos.global_mean[c];
                    }
                }
            }

            auto support_x = encode_all(head, support_base);
            const auto query_x = encode_all(head, query_base);

            langevin_update(protos, ep.relations, support_x, support_labels, features, config.langevin,
                            langevin_rng);
            const Matrix episode_protos = gather_rows(protos.v, ep.relations);

            const auto rep = representation_loss(query_x, query_labels, support_x, support_labels,
                                                 episode_protos, rep_options);
            grads.zero();
            accumulate(head, query_base, rep.d_query, grads);
            accumulate(head, support_base, rep.d_support, grads);
            optimizer_step(rep_opt, head, grads);
            head_changed = true;

            EpochLog row;
            row.epoch = epoch;
            row.cls = rep.cls;
            row.s2s = rep.s2s;
            row.s2v = rep.s2v;
            row.representation = rep.total;

            if (config.use_wd) {
                support_x = encode_all(head, support_base);
                std::vector<Vector> target_base;
                for (auto& s : sample_target_batch(target, config.target_batch, target_rng)) {
                    target_base.push_back(std::move(s.base_vector));
                }
                const auto target_x = encode_all(head, target_base);
                const auto adv = adversarial_loss(support_x, target_x, config.sinkhorn);
                if (!adv.solve.converged) {
                    log::debug("epoch " + std::to_string(epoch) + ": sinkhorn did not converge (violation " +
                               fmt_double(adv.solve.marginal_violation) + ")");
                }
                grads.zero();
                accumulate(head, support_base, adv.d_source, grads);
                accumulate(head, target_base, adv.d_target, grads);
                optimizer_step(adv_opt, head, grads);
                row.adversarial = adv.value;
                row.sinkhorn_iterations = adv.solve.iterations;
            }

            result.log.push_back(row);
            if (log_sink) *log_sink << log_csv_row(config, row) << '\n';

            if (validation && config.valid_every > 0 &&
                (epoch % config.valid_every == 0 || epoch == config.epochs)) {
                const auto report = evaluate(head, *validation, config.episode, config.valid_episodes, valid_seed);
                log::info("epoch " + std::to_string(epoch) + ": validation accuracy " +
                          fmt_double(report.accuracy));
                if (!result.best_validation_accuracy || report.accuracy > *result.best_validation_accuracy) {
                    result.best_validation_accuracy = report.accuracy;
                    result.best_epoch = epoch;
                    best_head = head;
                }
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("epoch " + std::to_string(epoch) + ": " + e.what());
        }
    }
    if (best_head) result.head = *best_head;
    if (!validation) result.best_epoch = config.epochs;
    return result;
}

TargetPrototypes adapt(const EncoderHead& encoder, const std::vector<EmbeddedSample>& support) {
    std::map<std::uint32_t, std::pair<Vector, std::size_t>> sums;
    for (const auto& s : support) {
        auto& [sum, count] = sums[s.relation_id];
        if (sum.empty()) sum.assign(encoder.d_out(), 0.0);
        axpy(1.0, encode(encoder, s.base_vector), sum);
        ++count;
    }
    if (sums.empty()) throw std::invalid_argument("adapt: empty support set");
    TargetPrototypes out;
    out.v = Matrix(sums.size(), encoder.d_out());
    std::size_t row = 0;
    for (const auto& [rel, entry] : sums) {
        out.relations.push_back(rel);
        for (std::size_t c = 0; c < encoder.d_out(); ++c) {
            out.v(row, c) = entry.first[c] / static_cast<double>(entry.second);
        }
        ++row;
    }
    return out;
}

std::uint32_t predict(std::span<const double> query_embedding, const TargetPrototypes& prototypes) {
    if (prototypes.relations.empty()) throw std::invalid_argument("predict: no prototypes");
    std::size_t best = 0;
    double best_score = dot(query_embedding, prototypes.v.row(0));
    for (std::size_t r = 1; r < prototypes.relations.size(); ++r) {
        const double score = dot(query_embedding, prototypes.v.row(r));
        if (score > best_score) {
            best_score = score;
            best = r;
        }
    }
    return prototypes.relations[best];
}

nlohmann::json EvalReport::to_json() const {
    return {{"accuracy", accuracy},
            {"ci95", ci95},
            {"episodes", episodes},
            {"n_way", spec.n_way},
            {"k_shot", spec.k_shot},
            {"q_query", spec.q_query},
            {"seed", seed}};
}

EvalReport summarize(std::vector<double> episode_accuracy, const EpisodeSpec& spec, std::uint64_t seed) {
    EvalReport report;
    report.spec = spec;
    report.seed = seed;
    report.episodes = episode_accuracy.size();
    if (!episode_accuracy.empty()) {
        double sum = 0.0;
        for (double a : episode_accuracy) sum += a;
        report.accuracy = sum / static_cast<double>(episode_accuracy.size());
        if (episode_accuracy.size() > 1) {
            double ss = 0.0;
            for (double a : episode_accuracy) ss += (a - report.accuracy) * (a - report.accuracy);
            const double sd = std::sqrt(ss / static_cast<double>(episode_accuracy.size() - 1));
            report.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(episode_accuracy.size()));
        }
    }
    report.episode_accuracy = std::move(episode_accuracy);
    return report;
}

EvalReport evaluate(const EncoderHead& encoder, const Dataset& dataset, const EpisodeSpec& spec,
                    std::size_t episode_count, std::uint64_t seed, std::size_t workers) {
    if (spec.q_query == 0) throw std::invalid_argument("evaluate: q_query must be positive");
    EpisodeSampler sampler(dataset, spec, seed);
    std::vector<Episode> episodes;
    episodes.reserve(episode_count);
    for (std::size_t e = 0; e < episode_count; ++e) episodes.push_back(sampler.next());

    std::vector<double> acc(episode_count, 0.0);
    auto score_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t e = begin; e < end; ++e) {
            const auto& ep = episodes[e];
            const TargetPrototypes protos = adapt(encoder, ep.support);
            std::size_t correct = 0;
            for (const auto& q : ep.query) {
                if (predict(encode(encoder, q.base_vector), protos) == q.relation_id) ++correct;
            }
            acc[e] = static_cast<double>(correct) / static_cast<double>(ep.query.size());
        }
    };

    if (workers == 0) workers = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
    workers = std::min(workers, std::max<std::size_t>(1, episode_count / 64));
    if (workers <= 1) {
        score_range(0, episode_count);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (episode_count + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk;
            const std::size_t e = std::min(episode_count, b + chunk);
            if (b < e) pool.emplace_back(score_range, b, e);
        }
        for (auto& t : pool) t.join();
    }
    return summarize(std::move(acc), spec, seed);
}

std::string variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::original: return "Original";
        case AblationVariant::with_wd: return "With Wd";
        case AblationVariant::with_con: return "With con";
        case AblationVariant::with_both: return "With Wd and con";
    }
    return "?";
}

TrainConfig apply_variant(TrainConfig config, AblationVariant v) {
    config.use_wd = v == AblationVariant::with_wd || v == AblationVariant::with_both;
    config.use_con = v == AblationVariant::with_con || v == AblationVariant::with_both;
    return config;
}

double AblationCell::mean() const {
    if (seed_accuracy.empty()) return 0.0;
    double s = 0.0;
    for (double a : seed_accuracy) s += a;
    return s / static_cast<double>(seed_accuracy.size());
}

const AblationCell& AblationTable::at(AblationVariant v, const EpisodeSpec& spec) const {
    for (const auto& c : cells) {
        if (c.variant == v && c.spec.n_way == spec.n_way && c.spec.k_shot == spec.k_shot &&
            c.spec.q_query == spec.q_query) {
            return c;
        }
    }
    throw std::out_of_range("ablation table has no such cell");
}

AblationTable run_ablation(const Dataset& source, const Dataset& target, const RelationGraph& graph,
                           const TrainConfig& base, const AblationOptions& options) {
    AblationTable table;
    for (auto variant : options.variants) {
        std::vector<AblationCell> row;
        for (const auto& spec : options.eval_specs) row.push_back({variant, spec, {}, {}});
        std::vector<std::vector<double>> pooled(options.eval_specs.size());
        for (auto seed : options.seeds) {
            TrainConfig config = apply_variant(base, variant);
            config.seed = seed;
            log::info("ablation: training '" + variant_name(variant) + "' seed " + std::to_string(seed));
            const auto trained = train(source, target, graph, config);
            for (std::size_t s = 0; s < options.eval_specs.size(); ++s) {
                const auto report = evaluate(trained.head, target, options.eval_specs[s], options.episodes,
                                             seed ^ 0x5eedULL);
                row[s].seed_accuracy.push_back(report.accuracy);
                pooled[s].insert(pooled[s].end(), report.episode_accuracy.begin(),
                                 report.episode_accuracy.end());
            }
        }
        for (std::size_t s = 0; s < row.size(); ++s) {
            row[s].pooled = summarize(std::move(pooled[s]), options.eval_specs[s], 0);
            table.cells.push_back(std::move(row[s]));
        }
    }
    return table;
}

void write_ablation_csv(std::ostream& out, const AblationTable& table) {
    out << "variant,n_way,k_shot,seeds,mean_accuracy,ci95,episodes\n";
    for (const auto& c : table.cells) {
        out << '"' << variant_name(c.variant) << "\"," << c.spec.n_way << ',' << c.spec.k_shot << ','
            << c.seed_accuracy.size() << ',' << fmt_double(c.mean()) << ',' << fmt_double(c.pooled.ci95)
            << ',' << c.pooled.episodes << '\n';
    }
}

namespace {

// Unit vector supported on the first `support` coordinates.
Vector random_unit(std::size_t dim, std::size_t support, Rng& rng) {
    Vector v(dim, 0.0);
    double n = 0.0;
    while (n == 0.0) {
        for (std::size_t k = 0; k < support; ++k) v[k] = rng.normal();
        n = norm(v);
    }
    for (double& x : v) x /= n;
    return v;
}

Dataset make_blobs(const Matrix& centers, std::size_t per_class, double noise, std::size_t nuisance_dims,
                   double nuisance_noise, Domain domain, const std::string& prefix, Rng& rng) {
    const std::size_t signal = centers.cols() - nuisance_dims;
    std::vector<EmbeddedSample> samples;
    samples.reserve(centers.rows() * per_class);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < centers.rows(); ++c) {
        names.push_back(prefix + std::to_string(c));
        for (std::size_t i = 0; i < per_class; ++i) {
            EmbeddedSample s;
            s.sample_id = samples.size();
            s.relation_id = static_cast<std::uint32_t>(c);
            s.domain = domain;
            s.base_vector.resize(centers.cols());
            for (std::size_t k = 0; k < centers.cols(); ++k) {
                const double sd = k < signal ? noise : nuisance_noise;
                s.base_vector[k] = round_to_f32(centers(c, k) + sd * rng.normal());
            }
            samples.push_back(std::move(s));
        }
    }
    return Dataset(std::move(samples), std::move(names), centers.cols(), domain, true);
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.dim < 2) throw std::invalid_argument("generate_synthetic: dim must be at least 2");
    if (spec.source_classes < 2 || spec.target_classes < 2) {
        throw std::invalid_argument("generate_synthetic: need at least 2 classes per domain");
    }
    if (spec.source_per_class == 0 || spec.target_per_class == 0) {
        throw std::invalid_argument("generate_synthetic: per-class count must be positive");
    }
    if (spec.noise < 0.0 || spec.nuisance_noise < 0.0) {
        throw std::invalid_argument("generate_synthetic: noise must be non-negative");
    }
    if (spec.nuisance_dims + 2 > spec.dim) {
        throw std::invalid_argument("generate_synthetic: need at least 2 signal dimensions");
    }
    if (spec.shift && spec.shift->size() != spec.dim) {
        throw std::invalid_argument("generate_synthetic: shift vector dimension mismatch");
    }

    const std::size_t signal = spec.dim - spec.nuisance_dims;
    Rng rng(spec.seed);
    Matrix source_centers(spec.source_classes, spec.dim);
    for (std::size_t c = 0; c < spec.source_classes; ++c) {
        const Vector u = random_unit(spec.dim, signal, rng);
        std::copy(u.begin(), u.end(), source_centers.row(c).begin());
    }
    Vector shift = spec.shift ? *spec.shift : random_unit(spec.dim, spec.dim, rng);
    if (!spec.shift) {
        for (double& x : shift) x *= spec.shift_norm;
    }
    Matrix target_centers(spec.target_classes, spec.dim);
    for (std::size_t c = 0; c < spec.target_classes; ++c) {
        const Vector u = random_unit(spec.dim, signal, rng);
        for (std::size_t k = 0; k < spec.dim; ++k) target_centers(c, k) = u[k] + shift[k];
    }

    Dataset source = make_blobs(source_centers, spec.source_per_class, spec.noise, spec.nuisance_dims,
                                spec.nuisance_noise, Domain::source, "src_", rng);
    Dataset target = make_blobs(target_centers, spec.target_per_class, spec.noise, spec.nuisance_dims,
                                spec.nuisance_noise, Domain::target, "tgt_", rng);

    Matrix transe(source_centers.rows(), source_centers.cols());
    for (std::size_t i = 0; i < transe.data().size(); ++i) transe.data()[i] = round_to_f32(source_centers.data()[i]);
    const std::size_t k = std::min(spec.graph_k, spec.source_classes - 1);
    RelationGraph graph = build_knn_graph(source.relation_names(), std::move(transe), k);

    return {std::move(source), std::move(target), std::move(graph), std::move(source_centers),
            std::move(target_centers), std::move(shift)};
}

double nearest_center_accuracy(const Dataset& dataset, const Matrix& centers) {
    if (dataset.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : dataset.samples()) {
        std::size_t best = 0;
        double best_d = squared_distance(s.base_vector, centers.row(0));
        for (std::size_t c = 1; c < centers.rows(); ++c) {
            const double d = squared_distance(s.base_vector, centers.row(c));
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == s.relation_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace xproto
