#include "xproto/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "xproto/binary_io.hpp"
#include "xproto/error.hpp"
#include "xproto/log.hpp"

namespace xproto {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw ValidationError("unknown domain '" + s + "'");
}

Dataset::Dataset(std::vector<EmbeddedSample> samples, std::vector<std::string> relation_names,
                 std::size_t dim, Domain domain, bool labeled)
    : samples_(std::move(samples)),
      relation_names_(std::move(relation_names)),
      dim_(dim),
      domain_(domain),
      labeled_(labeled),
      members_(relation_names_.size()) {
    if (dim_ == 0) throw ValidationError("dataset dim must be positive");
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (s.base_vector.size() != dim_) {
            throw ValidationError("sample " + std::to_string(s.sample_id) + ": dimension mismatch (" +
                                  std::to_string(s.base_vector.size()) + " != " +
                                  std::to_string(dim_) + ")");
        }
        if (!all_finite(s.base_vector)) {
            throw ValidationError("sample " + std::to_string(s.sample_id) + ": non-finite value");
        }
        if (s.relation_id >= relation_names_.size()) {
            throw ValidationError("sample " + std::to_string(s.sample_id) +
                                  ": unknown relation index " + std::to_string(s.relation_id));
        }
        if (s.domain != domain_) {
            throw ValidationError("sample " + std::to_string(s.sample_id) + ": domain mismatch");
        }
        members_[s.relation_id].push_back(i);
    }
    // Unlabeled files carry placeholder labels, so empty classes are only an error when labeled.
    if (labeled_) {
        for (std::size_t r = 0; r < members_.size(); ++r) {
            if (members_[r].empty()) {
                throw ValidationError("relation '" + relation_names_[r] + "' has no samples");
            }
        }
    }
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    const fs::path emb_path = dir / "embeddings.f32";
    const fs::path lab_path = dir / "labels.u32";
    for (const auto& p : {meta_path, emb_path, lab_path}) {
        if (!fs::exists(p)) throw ValidationError("missing file: " + p.string());
    }

    json meta;
    try {
        std::ifstream in(meta_path);
        meta = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("meta.json: " + std::string(e.what()));
    }

    std::size_t count = 0;
    std::size_t dim = 0;
    Domain domain = Domain::source;
    bool labeled = true;
    std::vector<std::string> relations;
    try {
        count = meta.at("count").get<std::size_t>();
        dim = meta.at("dim").get<std::size_t>();
        domain = domain_from_string(meta.at("domain").get<std::string>());
        relations = meta.at("relations").get<std::vector<std::string>>();
        labeled = meta.at("labeled").get<bool>();
    } catch (const json::exception& e) {
        throw ValidationError("meta.json: " + std::string(e.what()));
    }

    const auto emb_bytes = read_file_bytes(emb_path);
    if (emb_bytes.size() != count * dim * 4) {
        std::ostringstream msg;
        msg << "embeddings.f32: byte-count mismatch (expected " << count * dim * 4 << ", got "
            << emb_bytes.size() << ")";
        throw ValidationError(msg.str());
    }
    const auto lab_bytes = read_file_bytes(lab_path);
    if (lab_bytes.size() != count * 4) {
        std::ostringstream msg;
        msg << "labels.u32: byte-count mismatch (expected " << count * 4 << ", got "
            << lab_bytes.size() << ")";
        throw ValidationError(msg.str());
    }

    const auto values = decode_f32(emb_bytes);
    const auto labels = decode_u32(lab_bytes);

    std::vector<EmbeddedSample> samples(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto& s = samples[i];
        s.sample_id = i;
        s.domain = domain;
        s.relation_id = labels[i];
        s.base_vector.assign(values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                             values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    }
    return Dataset(std::move(samples), std::move(relations), dim, domain, labeled);
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
    fs::create_directories(dir);
    json meta;
    meta["count"] = dataset.size();
    meta["dim"] = dataset.dim();
    meta["domain"] = to_string(dataset.domain());
    meta["relations"] = dataset.relation_names();
    meta["labeled"] = dataset.labeled();
    {
        std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
        out << meta.dump(2) << '\n';
        if (!out) throw std::runtime_error("failed to write " + (dir / "meta.json").string());
    }

    std::vector<double> values;
    values.reserve(dataset.size() * dataset.dim());
    std::vector<std::uint32_t> labels;
    labels.reserve(dataset.size());
    for (const auto& s : dataset.samples()) {
        values.insert(values.end(), s.base_vector.begin(), s.base_vector.end());
        labels.push_back(s.relation_id);
    }
    write_file_bytes(dir / "embeddings.f32", encode_f32(values));
    write_file_bytes(dir / "labels.u32", encode_u32(labels));
}

std::vector<std::uint32_t> eligible_relations(const Dataset& dataset, const EpisodeSpec& spec) {
    std::vector<std::uint32_t> out;
    const std::size_t need = spec.k_shot + spec.q_query;
    for (std::uint32_t r = 0; r < dataset.relation_count(); ++r) {
        if (dataset.members(r).size() >= need) out.push_back(r);
    }
    return out;
}

namespace {

void check_spec(const EpisodeSpec& spec) {
    if (spec.n_way < 2) throw std::invalid_argument("episode n_way must be at least 2");
    if (spec.k_shot < 1) throw std::invalid_argument("episode k_shot must be at least 1");
}

Episode draw_episode(const Dataset& dataset, const EpisodeSpec& spec,
                     const std::vector<std::uint32_t>& eligible, Rng& rng) {
    if (eligible.size() < spec.n_way) {
        throw ValidationError("only " + std::to_string(eligible.size()) +
                              " relations have at least " +
                              std::to_string(spec.k_shot + spec.q_query) + " samples; need " +
                              std::to_string(spec.n_way));
    }
    Episode ep;
    ep.support.reserve(spec.n_way * spec.k_shot);
    ep.query.reserve(spec.n_way * spec.q_query);
    for (std::size_t pick : rng.choose(eligible.size(), spec.n_way)) {
        const std::uint32_t rel = eligible[pick];
        ep.relations.push_back(rel);
        const auto& members = dataset.members(rel);
        const auto chosen = rng.choose(members.size(), spec.k_shot + spec.q_query);
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            const auto& sample = dataset.sample(members[chosen[i]]);
            (i < spec.k_shot ? ep.support : ep.query).push_back(sample);
        }
    }
    return ep;
}

}  // namespace

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng) {
    check_spec(spec);
    return draw_episode(dataset, spec, eligible_relations(dataset, spec), rng);
}

EpisodeSampler::EpisodeSampler(const Dataset& dataset, EpisodeSpec spec, std::uint64_t seed)
    : dataset_(&dataset), spec_(spec), eligible_(eligible_relations(dataset, spec)), rng_(seed) {
    check_spec(spec_);
    const std::size_t skipped = dataset.relation_count() - eligible_.size();
    if (skipped > 0) {
        log::warn(std::to_string(skipped) + " relation(s) have fewer than " +
                  std::to_string(spec_.k_shot + spec_.q_query) +
                  " samples and are skipped for episode sampling");
    }
}

Episode EpisodeSampler::next() { return draw_episode(*dataset_, spec_, eligible_, rng_); }

std::vector<UnlabeledSample> sample_target_batch(const Dataset& dataset, std::size_t batch_size,
                                                 Rng& rng) {
    if (dataset.domain() != Domain::target) {
        throw std::invalid_argument("sample_target_batch: dataset is not a target-domain dataset");
    }
    if (batch_size > dataset.size()) {
        throw std::invalid_argument("sample_target_batch: batch_size " + std::to_string(batch_size) +
                                    " exceeds dataset size " + std::to_string(dataset.size()));
    }
    std::vector<UnlabeledSample> batch;
    batch.reserve(batch_size);
    for (std::size_t idx : rng.choose(dataset.size(), batch_size)) {
        const auto& s = dataset.sample(idx);
        batch.push_back({s.sample_id, s.base_vector});
    }
    return batch;
}

}  // namespace xproto
