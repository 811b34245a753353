#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "support.hpp"
#include "xproto/config.hpp"
#include "xproto/error.hpp"
#include "xproto/pipeline.hpp"

using namespace xproto;
using testing::TempDir;

namespace {

SyntheticData desk_data(std::uint64_t seed = 1) {
    SyntheticSpec spec;
    spec.seed = seed;
    return generate_synthetic(spec);
}

TrainConfig desk_config() {
    TrainConfig c;
    c.epochs = 300;
    c.d_out = 16;
    c.episode.q_query = 5;
    c.learning_rate = 3e-3;
    return c;
}

// Samples with no label signal: every vector is independent noise.
Dataset label_free_target(std::size_t relations, std::size_t per_relation, std::size_t dim, Rng& rng) {
    std::vector<EmbeddedSample> samples;
    std::vector<std::string> names;
    for (std::size_t r = 0; r < relations; ++r) {
        names.push_back("t" + std::to_string(r));
        for (std::size_t i = 0; i < per_relation; ++i) {
            EmbeddedSample s;
            s.sample_id = samples.size();
            s.relation_id = static_cast<std::uint32_t>(r);
            s.domain = Domain::target;
            s.base_vector = testing::random_vector(dim, rng);
            samples.push_back(std::move(s));
        }
    }
    return Dataset(std::move(samples), std::move(names), dim, Domain::target);
}

std::vector<EmbeddedSample> support_of(const std::vector<std::pair<std::uint32_t, Vector>>& items) {
    std::vector<EmbeddedSample> out;
    for (const auto& [r, v] : items) out.push_back({out.size(), v, r, Domain::target});
    return out;
}

}  // namespace

TEST_CASE("adapt: one shot, duplicates, naive mean") {
    const auto head = EncoderHead::identity(3);
    const auto one = adapt(head, support_of({{4, {1.0, 2.0, 3.0}}, {2, {0.0, -1.0, 0.5}}}));
    CHECK(one.relations == std::vector<std::uint32_t>{2, 4});
    CHECK(one.v(1, 0) == 1.0);
    CHECK(one.v(1, 2) == 3.0);
    CHECK(one.v(0, 1) == -1.0);

    const auto dup = adapt(head, support_of({{0, {0.3, 0.7, -0.2}}, {0, {0.3, 0.7, -0.2}}}));
    CHECK(dup.v(0, 0) == 0.3);
    CHECK(dup.v(0, 1) == 0.7);

    Rng rng(1);
    const auto rhead = EncoderHead::initialize(6, 4, Activation::tanh, rng);
    std::vector<std::pair<std::uint32_t, Vector>> items;
    for (std::uint32_t r = 0; r < 5; ++r) {
        for (int k = 0; k < 5; ++k) items.push_back({r, testing::random_vector(6, rng)});
    }
    const auto protos = adapt(rhead, support_of(items));
    for (std::uint32_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            long double s = 0.0L;
            for (const auto& [rel, v] : items) {
                if (rel == r) s += encode(rhead, v)[c];
            }
            CHECK(std::abs(protos.v(r, c) - static_cast<double>(s / 5)) <= 1e-12);
        }
    }

    // permutation of the support order changes nothing
    auto shuffled = items;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[3], shuffled[17]);
    const auto again = adapt(rhead, support_of(shuffled));
    CHECK(again.relations == protos.relations);
    for (std::size_t i = 0; i < protos.v.data().size(); ++i) {
        CHECK(again.v.data()[i] == doctest::Approx(protos.v.data()[i]).epsilon(1e-14));
    }
    CHECK_THROWS(adapt(head, {}));
}

TEST_CASE("predict: orthonormal prototypes and the tie rule") {
    TargetPrototypes p;
    p.relations = {3, 5, 9};
    p.v = Matrix(3, 3, 0.0);
    for (int i = 0; i < 3; ++i) p.v(i, i) = 1.0;
    CHECK(predict(Vector{0.0, 1.0, 0.0}, p) == 5);
    CHECK(predict(Vector{0.0, 0.0, 0.0}, p) == 3);
    Matrix q(1, 4, 0.0);
    TargetPrototypes flat{{1, 2}, Matrix(2, 2, 0.0)};
    flat.v(0, 0) = 1.0;
    flat.v(1, 0) = 1.0;
    CHECK(predict(Vector{0.5, 2.0}, flat) == 1);
}

TEST_CASE("predict is invariant to positive rescaling and agrees with the normalised score") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        TargetPrototypes p;
        for (std::uint32_t r = 0; r < 10; ++r) p.relations.push_back(r * 2);
        p.v = testing::random_matrix(10, 6, rng);
        const auto x = testing::random_vector(6, rng);
        const auto base = predict(x, p);
        for (double c : {1e-3, 0.5, 7.0}) {
            Vector xs = x;
            for (auto& v : xs) v *= c;
            CHECK(predict(xs, p) == base);
        }
        // argmax of x.v_r / sum_i x.v_i when the denominator is positive
        double denom = 0.0;
        for (std::size_t r = 0; r < 10; ++r) denom += dot(x, p.v.row(r));
        if (denom > 0.0) {
            std::size_t best = 0;
            for (std::size_t r = 1; r < 10; ++r) {
                if (dot(x, p.v.row(r)) / denom > dot(x, p.v.row(best)) / denom) best = r;
            }
            CHECK(base == p.relations[best]);
        }
    }
}

TEST_CASE("synthetic generator") {
    SUBCASE("no shift and no noise: samples are their class centers") {
        SyntheticSpec spec;
        spec.noise = 0.0;
        spec.nuisance_noise = 0.0;
        spec.shift = Vector(spec.dim, 0.0);
        const auto data = generate_synthetic(spec);
        for (const auto& s : data.target.samples()) {
            for (std::size_t k = 0; k < spec.dim; ++k) {
                CHECK(s.base_vector[k] == round_to_f32(data.target_centers(s.relation_id, k)));
            }
        }
    }
    SUBCASE("default desk data") {
        const auto data = desk_data();
        CHECK(data.source.size() == 1200);
        CHECK(data.source.relation_count() == 12);
        CHECK(data.target.size() == 500);
        CHECK(data.target.relation_count() == 10);
        CHECK(data.source.dim() == 32);
        CHECK(norm(data.shift) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(nearest_center_accuracy(data.target, data.target_centers) >= 0.95);
        CHECK(nearest_center_accuracy(data.source, data.source_centers) >= 0.95);
        for (std::size_t c = 0; c < 12; ++c) CHECK(norm(data.source_centers.row(c)) == doctest::Approx(1.0));
        // disjoint label spaces
        for (const auto& n : data.target.relation_names()) {
            CHECK(std::find(data.source.relation_names().begin(), data.source.relation_names().end(), n) ==
                  data.source.relation_names().end());
        }
        CHECK(data.graph.relation_names == data.source.relation_names());
        CHECK(data.graph.k == 10);
        for (std::size_t i = 0; i < data.graph.transe.data().size(); ++i) {
            CHECK(data.graph.transe.data()[i] == round_to_f32(data.source_centers.data()[i]));
        }
    }
    SUBCASE("source scale of 64 x 700 is accepted") {
        SyntheticSpec spec;
        spec.source_classes = 64;
        spec.source_per_class = 700;
        spec.target_per_class = 5;
        const auto data = generate_synthetic(spec);
        CHECK(data.source.size() == 44800);
    }
    SUBCASE("degenerate specs") {
        SyntheticSpec spec;
        spec.dim = 1;
        CHECK_THROWS(generate_synthetic(spec));
        spec.dim = 8;
        spec.source_classes = 1;
        CHECK_THROWS(generate_synthetic(spec));
    }
}

TEST_CASE("evaluate on a perfectly separated target is exact") {
    SyntheticSpec spec;
    spec.noise = 0.0;
    spec.nuisance_noise = 0.0;
    spec.shift = Vector(spec.dim, 0.0);
    const auto data = generate_synthetic(spec);
    const auto report = evaluate(EncoderHead::identity(spec.dim), data.target, {5, 1, 1}, 200, 3);
    CHECK(report.accuracy == 1.0);
    CHECK(report.ci95 == 0.0);
    CHECK(report.episodes == 200);
}

TEST_CASE("evaluate on a label-free target concentrates at 1/N") {
    Rng rng(4);
    const auto target = label_free_target(10, 50, 32, rng);
    Rng hrng(5);
    const auto head = EncoderHead::initialize(32, 16, Activation::identity, hrng);
    for (std::size_t n : {5u, 10u}) {
        const auto report = evaluate(head, target, {n, 1, 1}, 4000, 11);
        const double sd = report.ci95 / 1.96 * std::sqrt(4000.0);
        const double sigma = sd / std::sqrt(4000.0);
        CHECK(std::abs(report.accuracy - 1.0 / static_cast<double>(n)) <= 3.0 * sigma);
    }
}

TEST_CASE("evaluate accepts 10-way 5-shot and is independent of the worker count") {
    const auto data = desk_data(2);
    Rng rng(6);
    const auto head = EncoderHead::initialize(32, 16, Activation::identity, rng);
    const EpisodeSpec spec{10, 5, 3};
    const auto one = evaluate(head, data.target, spec, 300, 9, 1);
    const auto four = evaluate(head, data.target, spec, 300, 9, 4);
    CHECK(one.episode_accuracy == four.episode_accuracy);
    CHECK(one.accuracy == four.accuracy);
    CHECK(one.accuracy >= 0.0);
    CHECK(one.accuracy <= 1.0);
    const auto j = one.to_json();
    CHECK(j.at("n_way") == 10);
    CHECK(j.at("k_shot") == 5);
    CHECK(j.at("episodes") == 300);
}

TEST_CASE("summarize: mean and normal-approximation interval") {
    const auto r = summarize({1.0, 0.0, 0.5, 0.5}, {2, 1, 1}, 0);
    CHECK(r.accuracy == 0.5);
    const double sd = std::sqrt(0.5 / 3.0);
    CHECK(r.ci95 == doctest::Approx(1.96 * sd / 2.0).epsilon(1e-14));
}

TEST_CASE("training is deterministic") {
    const auto data = desk_data();
    auto config = desk_config();
    for (std::size_t epochs : {1u, 40u}) {
        config.epochs = epochs;
        std::ostringstream log_a;
        std::ostringstream log_b;
        const auto a = train(data.source, data.target, data.graph, config, nullptr, &log_a);
        const auto b = train(data.source, data.target, data.graph, config, nullptr, &log_b);
        CHECK(log_a.str() == log_b.str());
        TempDir dir("det");
        save_checkpoint(dir / "a.ckpt", a.head, a.optimizers);
        save_checkpoint(dir / "b.ckpt", b.head, b.optimizers);
        CHECK(read_file_bytes(dir / "a.ckpt") == read_file_bytes(dir / "b.ckpt"));
    }
    config.epochs = 5;
    const auto base = train(data.source, data.target, data.graph, config);
    config.seed = 2;
    const auto other = train(data.source, data.target, data.graph, config);
    CHECK_FALSE(base.head == other.head);
}

TEST_CASE("ablation switches control the log columns") {
    const auto data = desk_data();
    auto config = desk_config();
    config.epochs = 3;
    config.use_con = false;
    config.use_wd = false;
    std::ostringstream out;
    const auto r = train(data.source, data.target, data.graph, config, nullptr, &out);
    std::istringstream lines(out.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "epoch,cls");
    while (std::getline(lines, line)) CHECK(std::count(line.begin(), line.end(), ',') == 1);
    for (const auto& row : r.log) {
        CHECK(row.s2s == 0.0);
        CHECK(row.s2v == 0.0);
        CHECK(row.representation == row.cls);
    }

    config.use_con = true;
    config.use_wd = true;
    CHECK(log_csv_header(config) == "epoch,cls,s2s,s2v,representation,adversarial,sinkhorn_iterations");
}

TEST_CASE("training objective falls over a 20-epoch moving average") {
    // The objective is everything the two optimizer steps minimise:
    // representation loss plus the adversarial loss.
    const auto data = desk_data();
    auto config = desk_config();
    config.epochs = 200;
    const auto r = train(data.source, data.target, data.graph, config);
    REQUIRE(r.log.size() == 200);
    std::vector<double> objective;
    for (const auto& row : r.log) objective.push_back(row.representation + row.adversarial);
    std::vector<double> moving;
    for (std::size_t e = 20; e <= objective.size(); ++e) {
        moving.push_back(std::accumulate(objective.begin() + static_cast<std::ptrdiff_t>(e - 20),
                                         objective.begin() + static_cast<std::ptrdiff_t>(e), 0.0) /
                         20.0);
    }
    INFO("first window ", moving.front(), " last window ", moving.back());
    CHECK(moving.back() < moving.front());
    // each later non-overlapping window sits below the first one
    for (std::size_t b = 20; b < moving.size(); b += 20) CHECK(moving[b] < moving[0]);
}

TEST_CASE("validation picks the best checkpoint") {
    const auto data = desk_data();
    auto config = desk_config();
    config.epochs = 60;
    config.valid_every = 20;
    config.valid_episodes = 50;
    const auto valid = desk_data(7).target;
    const auto r = train(data.source, data.target, data.graph, config, &valid);
    REQUIRE(r.best_validation_accuracy.has_value());
    CHECK(r.best_epoch % 20 == 0);
    CHECK(*r.best_validation_accuracy >= 0.0);
}

TEST_CASE("train rejects mismatched inputs") {
    const auto data = desk_data();
    auto config = desk_config();
    config.epochs = 1;
    CHECK_THROWS_AS(train(data.target, data.target, data.graph, config), ValidationError);
    CHECK_THROWS_AS(train(data.source, data.source, data.graph, config), ValidationError);

    // a graph that does not name the source relations
    auto graph = data.graph;
    graph.relation_names[3] = "unknown";
    CHECK_THROWS_AS(train(data.source, data.target, graph, config), ValidationError);

    config.target_batch = 100000;
    CHECK_THROWS_AS(train(data.source, data.target, data.graph, config), ValidationError);
}

TEST_CASE("ablation table shape") {
    const auto data = desk_data();
    auto config = desk_config();
    config.epochs = 5;
    AblationOptions options;
    options.eval_specs = {{5, 1, 1}, {5, 5, 1}, {10, 1, 1}};
    options.seeds = {1, 2};
    options.episodes = 20;
    const auto table = run_ablation(data.source, data.target, data.graph, config, options);
    REQUIRE(table.cells.size() == 12);
    const char* names[] = {"Original", "With Wd", "With con", "With Wd and con"};
    for (std::size_t v = 0; v < 4; ++v) {
        for (std::size_t s = 0; s < 3; ++s) {
            const auto& cell = table.cells[v * 3 + s];
            CHECK(variant_name(cell.variant) == names[v]);
            CHECK(cell.seed_accuracy.size() == 2);
            CHECK(cell.pooled.episodes == 40);
        }
    }
    CHECK(table.at(AblationVariant::with_both, {10, 1, 1}).spec.n_way == 10);
    std::ostringstream csv;
    write_ablation_csv(csv, table);
    const auto text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 13);

    const auto orig = apply_variant(config, AblationVariant::original);
    CHECK_FALSE(orig.use_con);
    CHECK_FALSE(orig.use_wd);
    const auto wd = apply_variant(config, AblationVariant::with_wd);
    CHECK_FALSE(wd.use_con);
    CHECK(wd.use_wd);
}

TEST_CASE("config parsing") {
    TrainConfig c;
    apply_settings(c, {{"epochs", "25"}, {"rho", "0.3"}, {"use_wd", "false"}, {"cls_on", "both"}});
    CHECK(c.epochs == 25);
    CHECK(c.rho == 0.3);
    CHECK_FALSE(c.use_wd);
    CHECK(c.cls_on == ClsOn::both);
    CHECK_THROWS_AS(apply_settings(c, {{"no_such_key", "1"}}), ValidationError);
    CHECK_THROWS_AS(apply_settings(c, {{"epochs", "-3"}}), ValidationError);
    CHECK_THROWS_AS(apply_settings(c, {{"rho", "abc"}}), ValidationError);
    CHECK_THROWS_AS(apply_settings(c, {{"optimizer", "lbfgs"}}), ValidationError);

    TempDir dir("cfg");
    {
        std::ofstream f(dir / "a.conf");
        f << "# comment\nepochs = 12\n\nlearning_rate = 0.01  # trailing\nactivation = \"tanh\"\n";
    }
    const auto loaded = load_train_config(dir / "a.conf");
    CHECK(loaded.epochs == 12);
    CHECK(loaded.learning_rate == 0.01);
    CHECK(loaded.activation == Activation::tanh);
    {
        std::ofstream f(dir / "b.conf");
        f << "epochs 12\n";
    }
    CHECK_THROWS_AS(load_train_config(dir / "b.conf"), ValidationError);
    {
        std::ofstream f(dir / "c.conf");
        f << "langevin_steps = 17\n";
    }
    CHECK_THROWS_AS(load_train_config(dir / "c.conf"), ValidationError);

    TrainConfig defaults;
    CHECK(defaults.rho == 0.6);
    CHECK(defaults.langevin.step_size == 0.1);
    CHECK(defaults.optimizer == OptimizerKind::adam);
    CHECK(defaults.learning_rate == 1e-3);
    CHECK(defaults.d_out == 64);
    CHECK(defaults.epochs == 10000);
}

TEST_CASE("an untrained head on the desk target sits near chance") {
    const auto data = desk_data();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Rng rng(seed);
        const auto head = EncoderHead::initialize(32, 16, Activation::identity, rng);
        const auto r = evaluate(head, data.target, {5, 1, 1}, 1000, seed);
        CHECK(std::abs(r.accuracy - 0.2) <= 0.04);
    }
}
