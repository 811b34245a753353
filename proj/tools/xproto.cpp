// xproto: command-line front end for cross-domain few-shot prototype training.
//
// Results go to stdout as CSV or JSON; progress and diagnostics go to stderr.
// Exit status: 0 success, 2 invalid input data or config, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xproto/config.hpp"
#include "xproto/dataset.hpp"
#include "xproto/encoder.hpp"
#include "xproto/error.hpp"
#include "xproto/graph.hpp"
#include "xproto/log.hpp"
#include "xproto/losses.hpp"
#include "xproto/pipeline.hpp"
#include "xproto/prototypes.hpp"
#include "xproto/sinkhorn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xproto;

namespace {

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& items) {
    std::map<std::string, std::string> out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + item + "'");
        out[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

TrainConfig make_config(const std::string& path, const std::vector<std::string>& overrides) {
    TrainConfig config;
    if (!path.empty()) apply_settings(config, read_settings_file(path));
    apply_settings(config, parse_overrides(overrides));
    config.validate();
    return config;
}

EpisodeSpec parse_spec(const std::string& s) {
    // "5x1" or "5x1x1" (n_way x k_shot [x q_query])
    EpisodeSpec spec{0, 0, 1};
    std::vector<std::size_t> parts;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto x = s.find('x', start);
        const std::string tok = s.substr(start, x == std::string::npos ? std::string::npos : x - start);
        try {
            parts.push_back(std::stoul(tok));
        } catch (const std::exception&) {
            throw ValidationError("bad episode spec '" + s + "' (expected NxK or NxKxQ)");
        }
        if (x == std::string::npos) break;
        start = x + 1;
    }
    if (parts.size() < 2 || parts.size() > 3) throw ValidationError("bad episode spec '" + s + "'");
    spec.n_way = parts[0];
    spec.k_shot = parts[1];
    if (parts.size() == 3) spec.q_query = parts[2];
    return spec;
}

int cmd_validate(const std::string& dir) {
    if (fs::exists(fs::path(dir) / "graph.json")) {
        const auto graph = load_graph(dir);
        std::vector<std::size_t> degree(graph.relation_count(), 0);
        for (const auto& e : graph.edges) ++degree[e.from];
        const auto [lo, hi] = std::minmax_element(degree.begin(), degree.end());
        std::cout << json{{"kind", "graph"},
                          {"relations", graph.relation_count()},
                          {"dim", graph.dim()},
                          {"k", graph.k},
                          {"min_degree", *lo},
                          {"max_degree", *hi},
                          {"valid", true}}
                         .dump()
                  << '\n';
        return 0;
    }
    const auto ds = load_dataset(dir);
    std::size_t min_per = ds.size();
    std::size_t max_per = 0;
    for (std::uint32_t r = 0; r < ds.relation_count(); ++r) {
        min_per = std::min(min_per, ds.members(r).size());
        max_per = std::max(max_per, ds.members(r).size());
    }
    std::cout << json{{"kind", "dataset"},
                      {"count", ds.size()},
                      {"dim", ds.dim()},
                      {"domain", to_string(ds.domain())},
                      {"labeled", ds.labeled()},
                      {"relations", ds.relation_count()},
                      {"min_per_relation", min_per},
                      {"max_per_relation", max_per},
                      {"valid", true}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_build_graph(const std::string& dir, std::size_t k) {
    auto graph = load_graph(dir);
    graph = build_knn_graph(graph.relation_names, graph.transe, k);
    graph.validate();
    save_graph(graph, dir, true);
    std::cout << json{{"relations", graph.relation_count()}, {"k", graph.k}, {"edges", graph.edges.size()}}.dump()
              << '\n';
    return 0;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out) {
    const auto data = generate_synthetic(spec);
    write_dataset(data.source, fs::path(out) / "source");
    write_dataset(data.target, fs::path(out) / "target");
    save_graph(data.graph, fs::path(out) / "graph", true);
    std::cout << json{{"source", (fs::path(out) / "source").string()},
                      {"target", (fs::path(out) / "target").string()},
                      {"graph", (fs::path(out) / "graph").string()},
                      {"source_count", data.source.size()},
                      {"target_count", data.target.size()},
                      {"dim", spec.dim},
                      {"shift_norm", norm(data.shift)},
                      {"nearest_center_accuracy", nearest_center_accuracy(data.target, data.target_centers)}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_train(const std::string& source_dir, const std::string& target_dir, const std::string& graph_dir,
              const TrainConfig& config, const std::string& out, const std::string& valid_dir,
              const std::string& log_path) {
    const auto source = load_dataset(source_dir);
    const auto target = load_dataset(target_dir);
    const auto graph = load_graph(graph_dir);
    std::optional<Dataset> validation;
    if (!valid_dir.empty()) validation = load_dataset(valid_dir);

    std::ofstream log_file;
    if (!log_path.empty()) {
        log_file.open(log_path, std::ios::trunc);
        if (!log_file) throw std::runtime_error("cannot open log file " + log_path);
    }
    std::ostream& sink = log_path.empty() ? std::cout : static_cast<std::ostream&>(log_file);
    log::info("training for " + std::to_string(config.epochs) + " epochs: " + config.to_json().dump());
    const auto result = train(source, target, graph, config, validation ? &*validation : nullptr, &sink);
    save_checkpoint(out, result.head, result.optimizers);
    log::info("wrote " + out);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& target_dir, const EpisodeSpec& spec,
             std::size_t episodes, std::uint64_t seed) {
    const auto checkpoint = load_checkpoint(ckpt);
    const auto target = load_dataset(target_dir);
    const auto report = evaluate(checkpoint.head, target, spec, episodes, seed);
    std::cout << report.to_json().dump() << '\n';
    return 0;
}

// Values reported for the BERT-scale FewRel setting; context only, not a target.
const char* kReference =
    "Reference accuracies at BERT scale (FewRel source, 5w1s / 5w5s / 10w1s / 10w5s), not reproducible here:\n"
    "  Pubmed   Original         73.22 / 83.12 / 63.47 / 71.59\n"
    "  Pubmed   With Wd          72.65 / 82.97 / 61.94 / 72.47\n"
    "  Pubmed   With con         74.11 / 80.54 / 62.75 / 73.94\n"
    "  Pubmed   With Wd and con  73.75 / 82.24 / 66.94 / 74.53\n"
    "  Semeval  Original         49.98 / 67.39 / 38.19 / 50.52\n"
    "  Semeval  With Wd          51.46 / 67.88 / 38.46 / 54.09\n"
    "  Semeval  With con         51.79 / 67.50 / 40.87 / 55.49\n"
    "  Semeval  With Wd and con  52.98 / 68.45 / 39.31 / 56.65\n";

int cmd_ablate(const std::string& source_dir, const std::string& target_dir, const std::string& graph_dir,
               const TrainConfig& config, const AblationOptions& options, const std::string& report_path) {
    const auto source = load_dataset(source_dir);
    const auto target = load_dataset(target_dir);
    const auto graph = load_graph(graph_dir);
    const auto table = run_ablation(source, target, graph, config, options);
    write_ablation_csv(std::cout, table);
    if (!report_path.empty()) {
        std::ofstream rep(report_path, std::ios::trunc);
        rep << "# Ablation report\n\nConfig: `" << config.to_json().dump() << "`\n\n";
        rep << "| variant | spec | seeds | mean accuracy | 95% CI (pooled episodes) |\n|---|---|---|---|---|\n";
        for (const auto& c : table.cells) {
            char line[256];
            std::snprintf(line, sizeof line, "| %s | %zu-way-%zu-shot | %zu | %.4f | %.4f |\n",
                          variant_name(c.variant).c_str(), c.spec.n_way, c.spec.k_shot, c.seed_accuracy.size(),
                          c.mean(), c.pooled.ci95);
            rep << line;
        }
        rep << "\n```\n" << kReference << "```\n";
    }
    return 0;
}

int cmd_sinkhorn_bench(const std::string& a_dir, const std::string& b_dir, const SinkhornConfig& config) {
    const auto a = load_dataset(a_dir);
    const auto b = load_dataset(b_dir);
    if (a.dim() != b.dim()) throw ValidationError("sinkhorn-bench: embedding dimensions differ");
    std::vector<Vector> xs;
    std::vector<Vector> ys;
    for (const auto& s : a.samples()) xs.push_back(s.base_vector);
    for (const auto& s : b.samples()) ys.push_back(s.base_vector);
    const auto res = sinkhorn_uniform(cost_matrix(xs, ys), config);
    std::printf("wd,iterations,marginal_violation,converged,lambda\n%.17g,%zu,%.17g,%d,%.17g\n", res.value,
                res.iterations, res.marginal_violation, res.converged ? 1 : 0, res.lambda);
    return 0;
}

int cmd_loss_probe(const std::string& source_dir, const std::string& graph_dir, const std::string& target_dir,
                   const EpisodeSpec& spec, std::size_t d_out, std::uint64_t seed) {
    const auto source = load_dataset(source_dir);
    const auto graph = load_graph(graph_dir);
    TrainConfig config;
    config.d_out = d_out;
    config.episode = spec;
    Rng rng(seed);
    const auto head = EncoderHead::initialize(source.dim(), d_out, Activation::identity, rng);
    const auto features = source_graph_features(source, graph, head, config, rng);
    auto protos = init_prototypes(source, features, head, config.prior_std);
    Rng sample_rng(rng.split());
    const auto ep = sample_episode(source, spec, sample_rng);

    auto labels_of = [&](const std::vector<EmbeddedSample>& xs) {
        std::vector<std::size_t> out;
        for (const auto& s : xs) {
            out.push_back(static_cast<std::size_t>(
                std::find(ep.relations.begin(), ep.relations.end(), s.relation_id) - ep.relations.begin()));
        }
        return out;
    };
    auto encode_set = [&](const std::vector<EmbeddedSample>& xs) {
        std::vector<Vector> out;
        for (const auto& s : xs) out.push_back(encode(head, s.base_vector));
        return out;
    };
    const auto sx = encode_set(ep.support);
    const auto qx = encode_set(ep.query);
    const auto sl = labels_of(ep.support);
    const auto ql = labels_of(ep.query);
    const Matrix p = gather_rows(protos.v, ep.relations);
    RepresentationOptions opts;
    const auto rep = representation_loss(qx, ql, sx, sl, p, opts);
    json out{{"seed", seed},
             {"n_way", spec.n_way},
             {"k_shot", spec.k_shot},
             {"q_query", spec.q_query},
             {"cls", rep.cls},
             {"s2s", rep.s2s},
             {"s2v", rep.s2v},
             {"rho", opts.rho},
             {"representation", rep.total},
             {"support_log_likelihood", support_likelihood(p, sx, sl)}};
    if (!target_dir.empty()) {
        const auto target = load_dataset(target_dir);
        Rng batch_rng(sample_rng.split());
        std::vector<Vector> tx;
        for (const auto& s : sample_target_batch(target, config.target_batch, batch_rng)) {
            tx.push_back(encode(head, s.base_vector));
        }
        const auto adv = adversarial_loss(sx, tx, config.sinkhorn);
        out["adversarial"] = adv.value;
        out["sinkhorn_iterations"] = adv.solve.iterations;
    }
    std::cout << out.dump() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xproto: cross-domain few-shot prototype learning over precomputed embeddings"};
    app.require_subcommand(1);
    app.fallthrough();
    bool verbose = false;
    bool quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging on stderr");
    app.add_flag("-q,--quiet", quiet, "Only errors on stderr");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the encoder head");
    std::string source_dir, target_dir, graph_dir, config_path, out_path, valid_dir, log_path;
    std::vector<std::string> overrides;
    train_cmd->add_option("--source", source_dir, "Source dataset directory")->required();
    train_cmd->add_option("--target", target_dir, "Target dataset directory")->required();
    train_cmd->add_option("--graph", graph_dir, "Relation graph directory")->required();
    train_cmd->add_option("--config", config_path, "key=value config file");
    train_cmd->add_option("--set", overrides, "Config override key=value (repeatable)");
    train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
    train_cmd->add_option("--valid", valid_dir, "Validation dataset for checkpoint selection");
    train_cmd->add_option("--log", log_path, "Write the epoch CSV here instead of stdout");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on N-way-K-shot target episodes");
    std::string ckpt_path;
    std::size_t n_way = 5, k_shot = 1, q_query = 1, episodes = 1000;
    std::uint64_t seed = 7;
    eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    eval_cmd->add_option("--target", target_dir, "Target dataset directory")->required();
    eval_cmd->add_option("--n", n_way, "N-way")->capture_default_str();
    eval_cmd->add_option("--k", k_shot, "K-shot")->capture_default_str();
    eval_cmd->add_option("--q", q_query, "Queries per relation")->capture_default_str();
    eval_cmd->add_option("--episodes", episodes, "Episode count")->capture_default_str();
    eval_cmd->add_option("--seed", seed, "Episode seed")->capture_default_str();

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the four loss configurations");
    std::vector<std::string> spec_strings{"5x1"};
    std::size_t seed_count = 1;
    std::uint64_t first_seed = 1;
    std::string report_path;
    ablate_cmd->add_option("--source", source_dir, "Source dataset directory")->required();
    ablate_cmd->add_option("--target", target_dir, "Target dataset directory")->required();
    ablate_cmd->add_option("--graph", graph_dir, "Relation graph directory")->required();
    ablate_cmd->add_option("--config", config_path, "key=value config file");
    ablate_cmd->add_option("--set", overrides, "Config override key=value (repeatable)");
    ablate_cmd->add_option("--spec", spec_strings, "Evaluation episode spec NxK[xQ] (repeatable)");
    ablate_cmd->add_option("--seeds", seed_count, "Number of training seeds")->capture_default_str();
    ablate_cmd->add_option("--first-seed", first_seed, "First training seed")->capture_default_str();
    ablate_cmd->add_option("--episodes", episodes, "Evaluation episodes per seed")->capture_default_str();
    ablate_cmd->add_option("--report", report_path, "Write a markdown report here");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic shifted-domain problem");
    SyntheticSpec synth;
    synth_cmd->add_option("--classes", synth.source_classes, "Source classes")->capture_default_str();
    synth_cmd->add_option("--per-class", synth.source_per_class, "Samples per source class")->capture_default_str();
    synth_cmd->add_option("--target-classes", synth.target_classes, "Target classes")->capture_default_str();
    synth_cmd->add_option("--target-per-class", synth.target_per_class, "Samples per target class")
        ->capture_default_str();
    synth_cmd->add_option("--dim", synth.dim, "Embedding dimension")->capture_default_str();
    synth_cmd->add_option("--shift", synth.shift_norm, "Norm of the domain shift")->capture_default_str();
    synth_cmd->add_option("--noise", synth.noise, "Per-coordinate blob std")->capture_default_str();
    synth_cmd->add_option("--nuisance-dims", synth.nuisance_dims, "Trailing coordinates without class signal")
        ->capture_default_str();
    synth_cmd->add_option("--nuisance-noise", synth.nuisance_noise, "Noise std on the nuisance coordinates")
        ->capture_default_str();
    synth_cmd->add_option("--graph-k", synth.graph_k, "Graph neighbours")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Seed")->capture_default_str();
    synth_cmd->add_option("--out", out_path, "Output directory")->required();

    // validate-data
    auto* validate_cmd = app.add_subcommand("validate-data", "Check a dataset or graph directory");
    std::string data_dir;
    validate_cmd->add_option("dir", data_dir, "Directory")->required();

    // build-graph
    auto* graph_cmd = app.add_subcommand("build-graph", "Materialise k-NN edges into graph.json");
    std::size_t graph_k = 10;
    graph_cmd->add_option("dir", data_dir, "Graph directory")->required();
    graph_cmd->add_option("--k", graph_k, "Neighbours per relation")->capture_default_str();

    // sinkhorn-bench
    auto* bench_cmd = app.add_subcommand("sinkhorn-bench", "Wasserstein distance between two embedding sets");
    std::string a_dir, b_dir;
    SinkhornConfig sk;
    bench_cmd->add_option("a", a_dir, "First dataset directory")->required();
    bench_cmd->add_option("b", b_dir, "Second dataset directory")->required();
    bench_cmd->add_option("--reg", sk.regularization, "Regularisation (relative to mean cost)")->capture_default_str();
    bench_cmd->add_option("--max-iter", sk.max_iterations, "Iteration cap")->capture_default_str();
    bench_cmd->add_option("--tol", sk.marginal_tolerance, "Marginal tolerance")->capture_default_str();

    // loss-probe
    auto* probe_cmd = app.add_subcommand("loss-probe", "Print every loss component for one seeded episode");
    std::size_t d_out = 64;
    probe_cmd->add_option("--source", source_dir, "Source dataset directory")->required();
    probe_cmd->add_option("--graph", graph_dir, "Relation graph directory")->required();
    probe_cmd->add_option("--target", target_dir, "Target dataset (adds the adversarial term)");
    probe_cmd->add_option("--n", n_way, "N-way")->capture_default_str();
    probe_cmd->add_option("--k", k_shot, "K-shot")->capture_default_str();
    probe_cmd->add_option("--q", q_query, "Queries per relation")->capture_default_str();
    probe_cmd->add_option("--d-out", d_out, "Head output dimension")->capture_default_str();
    probe_cmd->add_option("--seed", seed, "Seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (verbose) log::set_level(log::Level::debug);
    if (quiet) log::set_level(log::Level::error);

    try {
        if (*train_cmd) {
            return cmd_train(source_dir, target_dir, graph_dir, make_config(config_path, overrides), out_path,
                             valid_dir, log_path);
        }
        if (*eval_cmd) return cmd_eval(ckpt_path, target_dir, {n_way, k_shot, q_query}, episodes, seed);
        if (*ablate_cmd) {
            AblationOptions options;
            options.eval_specs.clear();
            for (const auto& s : spec_strings) options.eval_specs.push_back(parse_spec(s));
            if (options.eval_specs.empty()) options.eval_specs.push_back({5, 1, 1});
            options.seeds.clear();
            for (std::size_t i = 0; i < seed_count; ++i) options.seeds.push_back(first_seed + i);
            options.episodes = episodes;
            return cmd_ablate(source_dir, target_dir, graph_dir, make_config(config_path, overrides), options,
                              report_path);
        }
        if (*synth_cmd) return cmd_synth(synth, out_path);
        if (*validate_cmd) return cmd_validate(data_dir);
        if (*graph_cmd) return cmd_build_graph(data_dir, graph_k);
        if (*bench_cmd) return cmd_sinkhorn_bench(a_dir, b_dir, sk);
        if (*probe_cmd) {
            return cmd_loss_probe(source_dir, graph_dir, target_dir, {n_way, k_shot, q_query}, d_out, seed);
        }
    } catch (const ValidationError& e) {
        log::error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log::error(e.what());
        return 1;
    }
    return 1;
}
